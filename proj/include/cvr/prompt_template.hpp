#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cvr {

using SlotValues = std::map<std::string, std::string, std::less<>>;

// Text with named {slot} placeholders. A slot name is [a-z_][a-z0-9_]*;
// any other brace is literal. "{{" renders as "{".
class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::string text);

  /// Throws ConfigError when a slot used by the template has no value.
  std::string render(const SlotValues& values) const;

  const std::string& text() const { return text_; }
  const std::vector<std::string>& slots() const { return slots_; }

 private:
  std::string text_;
  std::vector<std::string> slots_;
};

// Named templates. Defaults are compiled in; a directory of <name>.txt files
// overrides any of them.
class TemplateSet {
 public:
  static TemplateSet defaults();
  static TemplateSet load(const std::filesystem::path& dir);

  const PromptTemplate& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  void set(std::string name, std::string text);
  std::vector<std::string> names() const;

  /// Writes every template as <name>.txt.
  void write(const std::filesystem::path& dir) const;

 private:
  std::map<std::string, PromptTemplate, std::less<>> templates_;
};

/// The compiled-in default template texts, keyed by name.
const std::map<std::string, std::string>& default_template_texts();

}  // namespace cvr
