// Minimal TOML reader covering the subset the experiment configs use:
// comments, [tables], [[arrays of tables]], dotted headers, and key =
// scalar / homogeneous-array values.
#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace cfbench {

class TomlError : public std::runtime_error {
public:
    TomlError(const std::string& msg, int line)
        : std::runtime_error("toml line " + std::to_string(line) + ": " + msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct TomlValue {
    std::variant<std::int64_t, double, bool, std::string, std::vector<TomlValue>> v;

    bool is_int() const { return std::holds_alternative<std::int64_t>(v); }
    bool is_float() const { return std::holds_alternative<double>(v); }
    bool is_bool() const { return std::holds_alternative<bool>(v); }
    bool is_string() const { return std::holds_alternative<std::string>(v); }
    bool is_array() const { return std::holds_alternative<std::vector<TomlValue>>(v); }
};

struct TomlTable {
    std::map<std::string, TomlValue> values;
    std::map<std::string, TomlTable> tables;
    std::map<std::string, std::vector<TomlTable>> arrays;

    bool has(const std::string& key) const { return values.count(key) > 0; }

    std::int64_t get_int(const std::string& key, std::int64_t def) const {
        auto it = values.find(key);
        if (it == values.end()) return def;
        if (it->second.is_int()) return std::get<std::int64_t>(it->second.v);
        throw TomlError("key '" + key + "' is not an integer", 0);
    }
    double get_double(const std::string& key, double def) const {
        auto it = values.find(key);
        if (it == values.end()) return def;
        if (it->second.is_float()) return std::get<double>(it->second.v);
        if (it->second.is_int())
            return static_cast<double>(std::get<std::int64_t>(it->second.v));
        throw TomlError("key '" + key + "' is not a number", 0);
    }
    bool get_bool(const std::string& key, bool def) const {
        auto it = values.find(key);
        if (it == values.end()) return def;
        if (it->second.is_bool()) return std::get<bool>(it->second.v);
        throw TomlError("key '" + key + "' is not a boolean", 0);
    }
    std::string get_string(const std::string& key, const std::string& def) const {
        auto it = values.find(key);
        if (it == values.end()) return def;
        if (it->second.is_string()) return std::get<std::string>(it->second.v);
        throw TomlError("key '" + key + "' is not a string", 0);
    }
    std::vector<std::int64_t> get_int_array(const std::string& key) const {
        std::vector<std::int64_t> out;
        auto it = values.find(key);
        if (it == values.end()) return out;
        if (!it->second.is_array()) throw TomlError("key '" + key + "' is not an array", 0);
        for (const auto& e : std::get<std::vector<TomlValue>>(it->second.v)) {
            if (!e.is_int()) throw TomlError("array '" + key + "' holds non-integers", 0);
            out.push_back(std::get<std::int64_t>(e.v));
        }
        return out;
    }
    const TomlTable* table(const std::string& key) const {
        auto it = tables.find(key);
        return it == tables.end() ? nullptr : &it->second;
    }
    const std::vector<TomlTable>* array(const std::string& key) const {
        auto it = arrays.find(key);
        return it == arrays.end() ? nullptr : &it->second;
    }
};

namespace tomldetail {

inline std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// removes an unquoted trailing comment
inline std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

inline bool bare_key_ok(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
            return false;
    return true;
}

inline std::vector<std::string> split_dotted(const std::string& s, int line) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == '.') {
            parts.push_back(strip(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(strip(cur));
    for (const auto& p : parts)
        if (!bare_key_ok(p)) throw TomlError("bad table name '" + s + "'", line);
    return parts;
}

inline TomlValue parse_scalar(const std::string& raw, int line);

inline TomlValue parse_value(const std::string& raw, int line) {
    std::string s = strip(raw);
    if (s.empty()) throw TomlError("missing value", line);
    if (s.front() == '[') {
        if (s.back() != ']') throw TomlError("unterminated array", line);
        std::vector<TomlValue> arr;
        std::string inner = s.substr(1, s.size() - 2);
        std::string cur;
        bool in_str = false;
        int depth = 0;
        for (char c : inner) {
            if (c == '"') in_str = !in_str;
            if (!in_str) {
                if (c == '[') ++depth;
                if (c == ']') --depth;
                if (c == ',' && depth == 0) {
                    if (!strip(cur).empty()) arr.push_back(parse_value(cur, line));
                    cur.clear();
                    continue;
                }
            }
            cur += c;
        }
        if (!strip(cur).empty()) arr.push_back(parse_value(cur, line));
        TomlValue v;
        v.v = std::move(arr);
        return v;
    }
    return parse_scalar(s, line);
}

inline TomlValue parse_scalar(const std::string& s, int line) {
    TomlValue v;
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') throw TomlError("unterminated string", line);
        std::string out;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                ++i;
                switch (s[i]) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: throw TomlError("unsupported escape", line);
                }
            } else {
                out += s[i];
            }
        }
        v.v = std::move(out);
        return v;
    }
    if (s == "true") {
        v.v = true;
        return v;
    }
    if (s == "false") {
        v.v = false;
        return v;
    }
    bool floaty = s.find('.') != std::string::npos || s.find('e') != std::string::npos ||
                  s.find('E') != std::string::npos;
    try {
        std::size_t used = 0;
        if (floaty) {
            double d = std::stod(s, &used);
            if (used != s.size()) throw TomlError("trailing junk after number", line);
            v.v = d;
        } else {
            std::int64_t i = std::stoll(s, &used, 10);
            if (used != s.size()) throw TomlError("trailing junk after number", line);
            v.v = i;
        }
    } catch (const TomlError&) {
        throw;
    } catch (const std::exception&) {
        throw TomlError("cannot parse value '" + s + "'", line);
    }
    return v;
}

}  // namespace tomldetail

inline TomlTable parse_toml(const std::string& text) {
    TomlTable root;
    TomlTable* current = &root;
    std::istringstream in(text);
    std::string rawline;
    int lineno = 0;
    while (std::getline(in, rawline)) {
        ++lineno;
        std::string line = tomldetail::strip(tomldetail::strip_comment(rawline));
        if (line.empty()) continue;
        if (line.front() == '[') {
            bool is_array = line.size() > 1 && line[1] == '[';
            std::size_t close = line.find(is_array ? "]]" : "]");
            if (close == std::string::npos) throw TomlError("unterminated table header", lineno);
            std::string name = line.substr(is_array ? 2 : 1, close - (is_array ? 2 : 1));
            if (!tomldetail::strip(line.substr(close + (is_array ? 2 : 1))).empty())
                throw TomlError("junk after table header", lineno);
            auto parts = tomldetail::split_dotted(name, lineno);
            TomlTable* t = &root;
            for (std::size_t i = 0; i + 1 < parts.size(); ++i) t = &t->tables[parts[i]];
            if (is_array) {
                t->arrays[parts.back()].emplace_back();
                current = &t->arrays[parts.back()].back();
            } else {
                current = &t->tables[parts.back()];
            }
            continue;
        }
        std::size_t eq = std::string::npos;
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '=' && !in_str) {
                eq = i;
                break;
            }
        }
        if (eq == std::string::npos) throw TomlError("expected key = value", lineno);
        std::string key = tomldetail::strip(line.substr(0, eq));
        if (!tomldetail::bare_key_ok(key)) throw TomlError("bad key '" + key + "'", lineno);
        if (current->values.count(key)) throw TomlError("duplicate key '" + key + "'", lineno);
        current->values[key] = tomldetail::parse_value(line.substr(eq + 1), lineno);
    }
    return root;
}

inline TomlTable read_toml_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw TomlError("cannot open " + path, 0);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_toml(ss.str());
}

}  // namespace cfbench
