#include "cvr/prompt_template.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cvr/error.hpp"

namespace cvr {
namespace {

bool slot_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool slot_char(char c) { return slot_start(c) || (c >= '0' && c <= '9'); }

// Length of "{name}" at pos, or 0 if the brace is literal.
std::size_t slot_at(std::string_view text, std::size_t pos, std::string_view& name) {
  if (pos + 2 >= text.size() || !slot_start(text[pos + 1])) return 0;
  std::size_t end = pos + 2;
  while (end < text.size() && slot_char(text[end])) ++end;
  if (end >= text.size() || text[end] != '}') return 0;
  name = text.substr(pos + 1, end - pos - 1);
  return end - pos + 1;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  std::string_view t = text_;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != '{') continue;
    if (i + 1 < t.size() && t[i + 1] == '{') {
      ++i;
      continue;
    }
    std::string_view name;
    if (const auto len = slot_at(t, i, name)) {
      if (std::find(slots_.begin(), slots_.end(), name) == slots_.end()) slots_.emplace_back(name);
      i += len - 1;
    }
  }
}

std::string PromptTemplate::render(const SlotValues& values) const {
  std::string out;
  out.reserve(text_.size() * 2);
  std::string_view t = text_;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == '{') {
      if (i + 1 < t.size() && t[i + 1] == '{') {
        out.push_back('{');
        ++i;
        continue;
      }
      std::string_view name;
      if (const auto len = slot_at(t, i, name)) {
        auto it = values.find(name);
        if (it == values.end()) throw ConfigError("template slot {" + std::string(name) + "} has no value");
        out += it->second;
        i += len - 1;
        continue;
      }
    }
    out.push_back(t[i]);
  }
  return out;
}

TemplateSet TemplateSet::defaults() {
  TemplateSet set;
  for (const auto& [name, text] : default_template_texts()) set.set(name, text);
  return set;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("template directory '" + dir.string() + "' does not exist");
  TemplateSet set = defaults();
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    if (!text.empty() && text.back() == '\n') text.pop_back();
    set.set(entry.path().stem().string(), std::move(text));
  }
  return set;
}

const PromptTemplate& TemplateSet::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("unknown template '" + std::string(name) + "'");
  return it->second;
}

bool TemplateSet::contains(std::string_view name) const { return templates_.find(name) != templates_.end(); }

void TemplateSet::set(std::string name, std::string text) {
  templates_.insert_or_assign(std::move(name), PromptTemplate(std::move(text)));
}

std::vector<std::string> TemplateSet::names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : templates_) out.push_back(name);
  return out;
}

void TemplateSet::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, t] : templates_) {
    std::ofstream out(dir / (name + ".txt"), std::ios::binary);
    out << t.text() << '\n';
  }
}

}  // namespace cvr
