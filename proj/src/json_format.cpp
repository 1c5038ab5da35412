#include "viva/json_format.hpp"

#include <cmath>
#include <fmt/format.h>

namespace viva {
namespace {

void write(const nlohmann::json& v, std::string& out) {
  switch (v.type()) {
    case nlohmann::json::value_t::object: {
      out.push_back('{');
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) out.push_back(',');
        first = false;
        out += nlohmann::json(it.key()).dump();
        out.push_back(':');
        write(it.value(), out);
      }
      out.push_back('}');
      break;
    }
    case nlohmann::json::value_t::array: {
      out.push_back('[');
      bool first = true;
      for (const auto& e : v) {
        if (!first) out.push_back(',');
        first = false;
        write(e, out);
      }
      out.push_back(']');
      break;
    }
    case nlohmann::json::value_t::number_float: {
      const double d = v.get<double>();
      if (!std::isfinite(d)) {
        out += "null";
      } else {
        std::string s = fmt::format("{:.17g}", d);
        // Keep the value recognisably floating point when read back.
        if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
        out += s;
      }
      break;
    }
    default:
      out += v.dump();
  }
}

}  // namespace

std::string dump_exact(const nlohmann::json& value) {
  std::string out;
  write(value, out);
  return out;
}

}  // namespace viva
