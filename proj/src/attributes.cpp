#include "cwb/attributes.hpp"

#include "cwb/error.hpp"

namespace cwb::provisioning {

AttributeMap merge(const AttributeMap& defaults, const AttributeMap& overrides) {
  if (!defaults.is_object() || !overrides.is_object())
    return overrides.is_null() ? defaults : overrides;
  AttributeMap out = defaults;
  for (const auto& [k, v] : overrides.items()) {
    auto it = out.find(k);
    if (it != out.end() && it->is_object() && v.is_object()) {
      *it = merge(*it, v);
    } else {
      out[k] = v;
    }
  }
  return out;
}

std::optional<nlohmann::json> lookup(const AttributeMap& attrs, std::string_view dotted) {
  const nlohmann::json* node = &attrs;
  std::size_t start = 0;
  while (true) {
    auto dot = dotted.find('.', start);
    auto key = std::string(dotted.substr(start, dot == std::string_view::npos ? dotted.npos : dot - start));
    if (!node->is_object()) return std::nullopt;
    auto it = node->find(key);
    if (it == node->end()) return std::nullopt;
    node = &*it;
    if (dot == std::string_view::npos) return std::optional<nlohmann::json>(std::in_place, *node);
    start = dot + 1;
  }
}

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::string render_template(std::string_view text, const AttributeMap& attrs) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (true) {
    auto open = text.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      return out;
    }
    auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos)
      throw Error(Errc::StepFailed, "unterminated {{ in template");
    out.append(text.substr(pos, open - pos));
    auto key = text.substr(open + 2, close - open - 2);
    while (!key.empty() && key.front() == ' ') key.remove_prefix(1);
    while (!key.empty() && key.back() == ' ') key.remove_suffix(1);
    auto value = lookup(attrs, key);
    if (!value || value->is_object())
      throw Error(Errc::StepFailed, "template references unknown attribute " + std::string(key));
    out += scalar_text(*value);
    pos = close + 2;
  }
}

}  // namespace cwb::provisioning
