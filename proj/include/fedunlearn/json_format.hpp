#pragma once

#include <string>

#include <json.hpp>

namespace fedunlearn {

/// printf("%.17g"): enough digits for an exact double round trip.
std::string format_double(double x);

/// Compact JSON with every floating-point number at 17 significant digits.
/// Non-finite numbers become null.
std::string dump_json(const nlohmann::json& value, int indent = -1);

}  // namespace fedunlearn
