#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace cwb::provisioning {

using AttributeMap = nlohmann::json;

/// Recursive merge: objects merge key by key, any other value in `overrides`
/// replaces the default at that leaf.
AttributeMap merge(const AttributeMap& defaults, const AttributeMap& overrides);

/// Looks up "a.b.c" in nested objects.
std::optional<nlohmann::json> lookup(const AttributeMap& attrs, std::string_view dotted);

/// Scalar rendering used by templates: strings verbatim, numbers and booleans
/// in JSON form.
std::string scalar_text(const nlohmann::json& v);

/// Replaces every {{dotted.path}} with the attribute value. Throws
/// Error(StepFailed) naming the first unknown key.
std::string render_template(std::string_view text, const AttributeMap& attrs);

}  // namespace cwb::provisioning
