#ifndef TRIPS_VERSION_HPP_
#define TRIPS_VERSION_HPP_

namespace trips {
inline constexpr const char* kVersion = "0.1.0";
}

#endif  // TRIPS_VERSION_HPP_
