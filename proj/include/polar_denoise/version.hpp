#pragma once

#ifndef POLAR_DENOISE_VERSION_STRING
#define POLAR_DENOISE_VERSION_STRING "0.1.0"
#endif

namespace polar_denoise {

inline constexpr const char* kVersion = POLAR_DENOISE_VERSION_STRING;

}  // namespace polar_denoise
