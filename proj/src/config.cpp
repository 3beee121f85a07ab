#include "ahm/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ahm {

namespace {

std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

nlohmann::json parse_scalar(const std::string& tok) {
  std::string t = strip(tok);
  if (t.empty()) throw std::invalid_argument("empty value in config");
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"') throw std::invalid_argument("unterminated string: " + t);
    return t.substr(1, t.size() - 2);
  }
  if (t == "true") return true;
  if (t == "false") return false;
  // integer or float
  bool is_int = true;
  for (std::size_t i = 0; i < t.size(); ++i) {
    char c = t[i];
    if (i == 0 && (c == '+' || c == '-')) continue;
    if (!std::isdigit(static_cast<unsigned char>(c))) {
      is_int = false;
      break;
    }
  }
  try {
    if (is_int) return std::stoll(t);
    return std::stod(t);
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse config value: " + t);
  }
}

nlohmann::json parse_value(const std::string& tok) {
  std::string t = strip(tok);
  if (!t.empty() && t.front() == '[') {
    if (t.back() != ']') throw std::invalid_argument("unterminated array: " + t);
    nlohmann::json arr = nlohmann::json::array();
    std::string inner = t.substr(1, t.size() - 2);
    std::string cur;
    bool in_str = false;
    for (char c : inner) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        if (!strip(cur).empty()) arr.push_back(parse_scalar(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!strip(cur).empty()) arr.push_back(parse_scalar(cur));
    return arr;
  }
  return parse_scalar(t);
}

}  // namespace

nlohmann::json parse_config_text(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = strip(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw std::invalid_argument("bad table header at line " + std::to_string(lineno));
      std::string name = strip(s.substr(1, s.size() - 2));
      if (name.empty()) throw std::invalid_argument("empty table name at line " + std::to_string(lineno));
      root[name] = nlohmann::json::object();
      table = &root[name];
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("expected key = value at line " + std::to_string(lineno));
    std::string key = strip(s.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("empty key at line " + std::to_string(lineno));
    (*table)[key] = parse_value(s.substr(eq + 1));
  }
  return root;
}

nlohmann::json load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
    return nlohmann::json::parse(ss.str());
  return parse_config_text(ss.str());
}

std::uint64_t config_hash(const nlohmann::json& config) {
  std::string dump = config.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash_hex(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  return std::string(buf);
}

bool RunManifest::all_pass() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["subcommand"] = subcommand;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["wall_time_seconds"] = wall_time_seconds;
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    j["checks"].push_back({{"name", c.name},
                           {"lhs", c.lhs},
                           {"rhs", c.rhs},
                           {"tolerance", c.tolerance},
                           {"pass", c.pass}});
  }
  j["all_pass"] = all_pass();
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  f << text;
}

}  // namespace ahm
