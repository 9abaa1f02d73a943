#ifndef TRIPS_ERRORS_HPP_
#define TRIPS_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace trips {

// Base class for all library errors. Subcommands map these to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define TRIPS_DEFINE_ERROR(Name)            \
  struct Name : Error {                     \
    using Error::Error;                     \
  }

// linalg
TRIPS_DEFINE_ERROR(FactorizationFailure);
TRIPS_DEFINE_ERROR(DomainError);

// net
TRIPS_DEFINE_ERROR(ShapeError);
TRIPS_DEFINE_ERROR(UnknownClass);
TRIPS_DEFINE_ERROR(DuplicateClass);

// losses
TRIPS_DEFINE_ERROR(EmptyOldClassSet);
TRIPS_DEFINE_ERROR(EmptyPseudoBatch);
TRIPS_DEFINE_ERROR(MissingTerm);

// prototypes
TRIPS_DEFINE_ERROR(InsufficientSamples);
TRIPS_DEFINE_ERROR(ModelModeError);
TRIPS_DEFINE_ERROR(EmptyAccumulator);
TRIPS_DEFINE_ERROR(NoOldClasses);

// stream
TRIPS_DEFINE_ERROR(InsufficientClasses);
TRIPS_DEFINE_ERROR(UnknownDomain);
TRIPS_DEFINE_ERROR(EmptyDomain);
TRIPS_DEFINE_ERROR(ExhaustedDomain);
TRIPS_DEFINE_ERROR(ParseError);
TRIPS_DEFINE_ERROR(DimensionMismatch);

// trainer / eval
TRIPS_DEFINE_ERROR(NoCheckpoints);
TRIPS_DEFINE_ERROR(EmptyEvaluation);
TRIPS_DEFINE_ERROR(EmptyTestDomain);
TRIPS_DEFINE_ERROR(ShapeMismatch);

// cli
TRIPS_DEFINE_ERROR(ConfigError);
TRIPS_DEFINE_ERROR(RunArtifactError);

#undef TRIPS_DEFINE_ERROR

}  // namespace trips

#endif  // TRIPS_ERRORS_HPP_
