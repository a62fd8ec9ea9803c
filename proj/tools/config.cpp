#include "config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "labelprobe/core.hpp"

namespace labelprobe::cli {

namespace {

class Parser {
 public:
  Parser(std::string_view text, std::string_view origin) : s_(text), origin_(origin) {}

  nlohmann::json run() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        table = &open_table(root);
      } else {
        auto path = key_path();
        skip_inline_space();
        expect('=');
        skip_inline_space();
        nlohmann::json v = value();
        assign(*table, path, std::move(v));
      }
      end_of_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(std::string(origin_) + ":" + std::to_string(line_) + ":" + std::to_string(col_) + ": " + what);
  }

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  char get() {
    const char c = s_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    get();
  }

  void skip_inline_space() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) get();
  }
  void skip_comment() {
    if (peek() == '#') {
      while (!eof() && peek() != '\n') get();
    }
  }
  void skip_blank_lines() {
    while (!eof()) {
      skip_inline_space();
      skip_comment();
      if (peek() == '\r') get();
      if (peek() == '\n') {
        get();
        continue;
      }
      break;
    }
  }
  // inside arrays and inline tables
  void skip_space_and_newlines() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        get();
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }
  void end_of_line() {
    skip_inline_space();
    skip_comment();
    if (peek() == '\r') get();
    if (eof()) return;
    if (peek() != '\n') fail("unexpected trailing characters");
    get();
  }

  std::string bare_key() {
    std::string k;
    while (!eof()) {
      const char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') {
        k += get();
      } else {
        break;
      }
    }
    if (k.empty()) fail("expected a key");
    return k;
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> path{peek() == '"' ? basic_string() : bare_key()};
    while (true) {
      skip_inline_space();
      if (peek() != '.') break;
      get();
      skip_inline_space();
      path.push_back(peek() == '"' ? basic_string() : bare_key());
    }
    return path;
  }

  nlohmann::json& open_table(nlohmann::json& root) {
    expect('[');
    if (peek() == '[') fail("arrays of tables are not supported; use an array of inline tables");
    skip_inline_space();
    auto path = key_path();
    skip_inline_space();
    expect(']');
    nlohmann::json* t = &root;
    for (const auto& k : path) {
      if (!t->contains(k)) (*t)[k] = nlohmann::json::object();
      t = &(*t)[k];
      if (!t->is_object()) fail("'" + k + "' is already a value");
    }
    const std::string full = join(path);
    for (const auto& seen : tables_) {
      if (seen == full) fail("table [" + full + "] defined twice");
    }
    tables_.push_back(full);
    return *t;
  }

  static std::string join(const std::vector<std::string>& path) {
    std::string out;
    for (const auto& k : path) out += (out.empty() ? "" : ".") + k;
    return out;
  }

  void assign(nlohmann::json& table, const std::vector<std::string>& path, nlohmann::json v) {
    nlohmann::json* t = &table;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!t->contains(path[i])) (*t)[path[i]] = nlohmann::json::object();
      t = &(*t)[path[i]];
      if (!t->is_object()) fail("'" + path[i] + "' is already a value");
    }
    if (t->contains(path.back())) fail("duplicate key '" + join(path) + "'");
    (*t)[path.back()] = std::move(v);
  }

  nlohmann::json value() {
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (c == '{') return inline_table();
    if (s_.substr(pos_, 4) == "true") {
      for (int i = 0; i < 4; ++i) get();
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      for (int i = 0; i < 5; ++i) get();
      return false;
    }
    return number();
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = get();
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      switch (get()) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: fail("unsupported escape sequence");
      }
    }
    return out;
  }

  std::string literal_string() {
    expect('\'');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = get();
      if (c == '\'') break;
      out += c;
    }
    return out;
  }

  nlohmann::json number() {
    const std::size_t start = pos_;
    while (!eof()) {
      const char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' || c == '_') {
        get();
      } else {
        break;
      }
    }
    std::string text(s_.substr(start, pos_ - start));
    if (text.empty()) fail("expected a value");
    std::erase(text, '_');
    const char* b = text.data();
    const char* e = b + text.size();
    if (*b == '+') ++b;
    const bool is_float = text.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      std::int64_t v = 0;
      const auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || p != e) fail("invalid number '" + text + "'");
      return v;
    }
    double v = 0.0;
    const auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) fail("invalid number '" + text + "'");
    return v;
  }

  nlohmann::json array() {
    expect('[');
    nlohmann::json out = nlohmann::json::array();
    while (true) {
      skip_space_and_newlines();
      if (peek() == ']') break;
      out.push_back(value());
      skip_space_and_newlines();
      if (peek() == ',') {
        get();
        continue;
      }
      if (peek() != ']') fail("expected ',' or ']'");
    }
    get();
    return out;
  }

  nlohmann::json inline_table() {
    expect('{');
    nlohmann::json out = nlohmann::json::object();
    while (true) {
      skip_space_and_newlines();
      if (peek() == '}') break;
      auto path = key_path();
      skip_inline_space();
      expect('=');
      skip_inline_space();
      assign(out, path, value());
      skip_space_and_newlines();
      if (peek() == ',') {
        get();
        continue;
      }
      if (peek() != '}') fail("expected ',' or '}'");
    }
    get();
    return out;
  }

  std::string_view s_;
  std::string_view origin_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  std::vector<std::string> tables_;
};

}  // namespace

nlohmann::json parse_config(std::string_view text, std::string_view origin) { return Parser(text, origin).run(); }

nlohmann::json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

}  // namespace labelprobe::cli
