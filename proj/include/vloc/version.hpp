#ifndef VLOC_VERSION_HPP_
#define VLOC_VERSION_HPP_

#include <string_view>

namespace vloc {

inline constexpr std::string_view kLibraryVersion = "0.1.0";

}  // namespace vloc

#endif  // VLOC_VERSION_HPP_
