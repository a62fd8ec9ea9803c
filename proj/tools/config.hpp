#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace labelprobe::cli {

/// Parses the experiment-config subset of TOML into a JSON object:
/// `[table.path]` headers, `key = value` and `a.b = value` pairs, basic and
/// literal strings, integers, floats, booleans, arrays and inline tables.
/// Errors carry `origin:line:column`.
nlohmann::json parse_config(std::string_view text, std::string_view origin = "<config>");
nlohmann::json load_config(const std::filesystem::path& path);

}  // namespace labelprobe::cli
