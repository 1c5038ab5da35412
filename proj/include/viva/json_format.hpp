#pragma once

#include <string>

#include "json.hpp"

namespace viva {

// Compact JSON with keys in sorted order and every floating-point number
// written with 17 significant digits, so doubles survive a text round trip
// bit-for-bit. Integers are written as integers.
std::string dump_exact(const nlohmann::json& value);

// Canonical form used for hashing: dump_exact of the document.
inline std::string canonical(const nlohmann::json& value) { return dump_exact(value); }

}  // namespace viva
