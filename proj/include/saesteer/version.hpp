#pragma once

#define SAESTEER_VERSION "0.1.0"

namespace saesteer {

inline const char* version() { return SAESTEER_VERSION; }

} // namespace saesteer
