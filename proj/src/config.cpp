#include "ppr/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>

#include "ppr/error.hpp"
#include "ppr/util.hpp"

namespace ppr {

using nlohmann::json;

namespace {

class TomlParser {
 public:
  explicit TomlParser(std::string_view text) : s_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        if (!eof() && peek() == '[') fail("arrays of tables are not supported");
        auto keys = parse_key_path();
        skip_inline_ws();
        expect(']');
        table = &root;
        for (const auto& k : keys) {
          json& next = (*table)[k];
          if (next.is_null()) next = json::object();
          if (!next.is_object()) fail("key '" + k + "' is not a table");
          table = &next;
        }
      } else {
        auto keys = parse_key_path();
        skip_inline_ws();
        expect('=');
        skip_inline_ws();
        json value = parse_value();
        assign(*table, keys, std::move(value));
      }
      skip_inline_ws();
      if (!eof() && peek() == '#') skip_comment();
      if (!eof() && peek() != '\n' && peek() != '\r') fail("expected end of line");
    }
    return root;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, "config: " + what); }

  void expect(char c) {
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    while (!eof() && peek() != '\n') ++pos_;
  }

  void skip_ws_comments_newlines() {
    while (!eof()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r') {
        ++pos_;
      } else if (c == '\n') {
        ++pos_;
        ++line_;
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  std::string parse_key() {
    skip_inline_ws();
    if (eof()) fail("expected a key");
    if (peek() == '"') return parse_basic_string();
    if (peek() == '\'') return parse_literal_string();
    std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (start == pos_) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> keys{parse_key()};
    skip_inline_ws();
    while (!eof() && peek() == '.') {
      ++pos_;
      keys.push_back(parse_key());
      skip_inline_ws();
    }
    return keys;
  }

  void assign(json& table, const std::vector<std::string>& keys, json value) {
    json* t = &table;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
      json& next = (*t)[keys[i]];
      if (next.is_null()) next = json::object();
      if (!next.is_object()) fail("key '" + keys[i] + "' is not a table");
      t = &next;
    }
    if (t->contains(keys.back())) fail("duplicate key '" + keys.back() + "'");
    (*t)[keys.back()] = std::move(value);
  }

  std::string parse_basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (eof()) fail("bad escape");
      char e = s_[pos_++];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case 'u': {
          if (pos_ + 4 > s_.size()) fail("bad \\u escape");
          unsigned cp = 0;
          auto r = std::from_chars(s_.data() + pos_, s_.data() + pos_ + 4, cp, 16);
          if (r.ec != std::errc() || r.ptr != s_.data() + pos_ + 4) fail("bad \\u escape");
          pos_ += 4;
          // Encode as UTF-8 via nlohmann for correctness.
          char buf[7];
          std::snprintf(buf, sizeof buf, "\\u%04x", cp);
          out += json::parse(std::string("\"") + buf + "\"").get<std::string>();
          break;
        }
        default: fail(std::string("unknown escape \\") + e);
      }
    }
    return out;
  }

  std::string parse_literal_string() {
    expect('\'');
    std::size_t start = pos_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++pos_;
    if (eof() || peek() != '\'') fail("unterminated literal string");
    std::string out(s_.substr(start, pos_ - start));
    ++pos_;
    return out;
  }

  json parse_value() {
    if (eof()) fail("expected a value");
    char c = peek();
    if (c == '"') return parse_basic_string();
    if (c == '\'') return parse_literal_string();
    if (c == '[') return parse_array();
    if (c == '{') return parse_inline_table();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return parse_number();
  }

  json parse_number() {
    std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                      peek() == '.' || peek() == '_')) {
      ++pos_;
    }
    std::string tok;
    for (char c : s_.substr(start, pos_ - start)) {
      if (c != '_') tok.push_back(c);
    }
    if (tok.empty()) fail("expected a value");
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    if (*b == '+') ++b;
    bool is_float = tok.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      long long v = 0;
      auto r = std::from_chars(b, e, v);
      if (r.ec == std::errc() && r.ptr == e) return v;
    } else {
      double v = 0;
      auto r = std::from_chars(b, e, v);
      if (r.ec == std::errc() && r.ptr == e) return v;
    }
    fail("invalid value '" + tok + "'");
  }

  json parse_array() {
    expect('[');
    json arr = json::array();
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) fail("unterminated array");
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_ws_comments_newlines();
      if (!eof() && peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws_comments_newlines();
      expect(']');
      return arr;
    }
  }

  json parse_inline_table() {
    expect('{');
    json t = json::object();
    skip_inline_ws();
    if (!eof() && peek() == '}') {
      ++pos_;
      return t;
    }
    while (true) {
      auto keys = parse_key_path();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      assign(t, keys, parse_value());
      skip_inline_ws();
      if (!eof() && peek() == ',') {
        ++pos_;
        continue;
      }
      expect('}');
      return t;
    }
  }
};

}  // namespace

json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

json load_config(const std::string& path) {
  std::string content = read_file(path);
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0) {
    try {
      return json::parse(content);
    } catch (const json::parse_error& e) {
      throw ParseError(0, std::string("config: ") + e.what());
    }
  }
  return parse_toml(content);
}

}  // namespace ppr
