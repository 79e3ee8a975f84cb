#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace ppr {

/// Parses the TOML subset used by config files: comments, [table] and
/// [a.b] headers, bare/quoted/dotted keys, basic and literal strings,
/// integers, floats, booleans, arrays (may span lines) and inline tables.
/// Throws ParseError with the line number.
nlohmann::json parse_toml(std::string_view text);

/// Loads `.json` files as JSON and everything else as TOML.
nlohmann::json load_config(const std::string& path);

}  // namespace ppr
