#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace harnet {

/**
 * Line-oriented key=value document with optional [section] headers.
 *
 *   # comment
 *   top_key=value
 *   [train]
 *   lr=0.01
 *
 * Sections may repeat (manifests list one [pair] per entry), so a document is
 * an ordered list of sections. Keys before the first header belong to the
 * unnamed section "".
 */
class KeyValueDoc {
 public:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    std::optional<std::string> find(const std::string& key) const;
    /// Throws a data error naming the key when absent.
    const std::string& require(const std::string& key) const;
    void set(const std::string& key, std::string value);
  };

  static KeyValueDoc parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueDoc load(const std::filesystem::path& path);

  Section& add_section(std::string name);
  /// First section with this name, created at the end if absent.
  Section& section(const std::string& name);
  const Section* find_section(const std::string& name) const;
  std::vector<const Section*> sections_named(const std::string& name) const;
  const std::vector<Section>& sections() const { return sections_; }

  std::string serialize() const;

 private:
  std::vector<Section> sections_;
};

/// Round-trip-exact decimal text for a double.
std::string format_double(double value);

double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);

/// Write via a temp file in the same directory and rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace harnet
