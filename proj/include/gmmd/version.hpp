#pragma once

#ifndef GMMD_VERSION
#define GMMD_VERSION "0.0.0"
#endif

namespace gmmd {

inline constexpr const char* kVersion = GMMD_VERSION;

}  // namespace gmmd
