#include "harnet/keyvalue.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <system_error>

#include "harnet/error.hpp"

namespace harnet {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::optional<std::string> KeyValueDoc::Section::find(const std::string& key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& KeyValueDoc::Section::require(const std::string& key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  const std::string where = name.empty() ? std::string("top level") : "[" + name + "]";
  throw data_error("missing field '" + key + "' in " + where);
}

void KeyValueDoc::Section::set(const std::string& key, std::string value) {
  for (auto& [k, v] : entries) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries.emplace_back(key, std::move(value));
}

KeyValueDoc KeyValueDoc::parse(const std::string& text, const std::string& origin) {
  KeyValueDoc doc;
  doc.sections_.push_back(Section{});
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw data_error(origin + ":" + std::to_string(lineno) + ": malformed section header");
      }
      doc.sections_.push_back(Section{trim(t.substr(1, t.size() - 2)), {}});
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw data_error(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    doc.sections_.back().entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

KeyValueDoc::Section& KeyValueDoc::add_section(std::string name) {
  if (sections_.empty()) sections_.push_back(Section{});
  sections_.push_back(Section{std::move(name), {}});
  return sections_.back();
}

KeyValueDoc::Section& KeyValueDoc::section(const std::string& name) {
  if (sections_.empty()) sections_.push_back(Section{});
  for (auto& s : sections_) {
    if (s.name == name) return s;
  }
  return add_section(name);
}

const KeyValueDoc::Section* KeyValueDoc::find_section(const std::string& name) const {
  for (const auto& s : sections_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::vector<const KeyValueDoc::Section*> KeyValueDoc::sections_named(const std::string& name) const {
  std::vector<const Section*> out;
  for (const auto& s : sections_) {
    if (s.name == name) out.push_back(&s);
  }
  return out;
}

std::string KeyValueDoc::serialize() const {
  std::ostringstream out;
  for (const auto& s : sections_) {
    if (!s.name.empty()) out << '[' << s.name << "]\n";
    for (const auto& [k, v] : s.entries) out << k << '=' << v << '\n';
  }
  return out.str();
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE) {
    throw usage_error("invalid number for " + what + ": '" + text + "'");
  }
  return v;
}

long long parse_int(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  long long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size()) {
    throw usage_error("invalid integer for " + what + ": '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw usage_error("invalid boolean for " + what + ": '" + text + "'");
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) {
    throw data_error("output directory does not exist: " + parent.string());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw data_error("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw data_error("cannot rename into " + path.string());
  }
}

}  // namespace harnet
