#include "slurmbridge/descriptor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "slurmbridge/error.hpp"

namespace slurmbridge {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::string_view kKnownMembers[] = {"name", "schema-version", "container-image", "command-line",
                                              "inputs"};
constexpr std::string_view kReservedEnv[] = {"IN_PATH", "OUT_PATH", "GT_PATH"};

bool valid_param_id(std::string_view id) {
  if (id.empty() || id.front() < 'a' || id.front() > 'z') return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

std::optional<ValueType> parse_type(std::string_view text) {
  if (text == "Number") return ValueType::Number;
  if (text == "String") return ValueType::String;
  if (text == "Boolean") return ValueType::Boolean;
  return std::nullopt;
}

bool conforms(const ParamValue& value, ValueType type) {
  switch (type) {
    case ValueType::Number: return std::holds_alternative<double>(value);
    case ValueType::String: return std::holds_alternative<std::string>(value);
    case ValueType::Boolean: return std::holds_alternative<bool>(value);
  }
  return false;
}

std::optional<ParamValue> json_to_value(const ojson& node, ValueType type) {
  switch (type) {
    case ValueType::Number:
      if (node.is_number()) return ParamValue{node.get<double>()};
      break;
    case ValueType::String:
      if (node.is_string()) return ParamValue{node.get<std::string>()};
      break;
    case ValueType::Boolean:
      if (node.is_boolean()) return ParamValue{node.get<bool>()};
      break;
  }
  return std::nullopt;
}

ojson value_to_json(const ParamValue& value) {
  return std::visit([](const auto& v) { return ojson(v); }, value);
}

std::string require_string(const ojson& parent, const char* key, const std::string& path) {
  auto it = parent.find(key);
  if (it == parent.end() || !it->is_string())
    throw Error(Errc::InvalidDescriptor, path + key, "expected a string");
  return it->get<std::string>();
}

struct Token {
  std::string text;
  std::optional<std::string> placeholder;  // upper-cased name when the token is `[NAME]`
};

std::vector<Token> tokenize_template(std::string_view tmpl) {
  std::vector<Token> tokens;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    while (pos < tmpl.size() && std::isspace(static_cast<unsigned char>(tmpl[pos]))) ++pos;
    std::size_t end = pos;
    while (end < tmpl.size() && !std::isspace(static_cast<unsigned char>(tmpl[end]))) ++end;
    if (end > pos) {
      Token tok{std::string(tmpl.substr(pos, end - pos)), std::nullopt};
      const auto open = tok.text.find('[');
      if (open != std::string::npos) {
        const auto close = tok.text.find(']', open);
        if (open == 0 && close == tok.text.size() - 1 && close > 1) {
          tok.placeholder = to_upper(std::string_view(tok.text).substr(1, close - 1));
        } else if (close != std::string::npos) {
          throw Error(Errc::InvalidDescriptor, "command-line",
                      "placeholder must be a standalone token: " + tok.text);
        }
      }
      tokens.push_back(std::move(tok));
    }
    pos = end;
  }
  return tokens;
}

std::set<std::string> ignored_ids(const WorkflowDescriptor& d) {
  std::set<std::string> ids;
  for (const auto& input : d.ignored_inputs) {
    auto it = input.find("id");
    if (it != input.end() && it->is_string()) ids.insert(to_upper(it->get<std::string>()));
  }
  return ids;
}

void check_invariants(const WorkflowDescriptor& d) {
  std::set<std::string> ids;
  std::set<std::string> env_names;
  for (std::size_t i = 0; i < d.params.size(); ++i) {
    const auto& p = d.params[i];
    const std::string where = "inputs[" + std::to_string(i) + "]";
    if (!valid_param_id(p.id)) throw Error(Errc::InvalidDescriptor, where + ".id", "invalid id '" + p.id + "'");
    if (!ids.insert(p.id).second) throw Error(Errc::InvalidDescriptor, where + ".id", "duplicate id '" + p.id + "'");
    const auto env = to_upper(p.id);
    if (!env_names.insert(env).second || std::find(std::begin(kReservedEnv), std::end(kReservedEnv), env) !=
                                             std::end(kReservedEnv))
      throw Error(Errc::InvalidDescriptor, where + ".id", "environment name collision for '" + env + "'");
    if (p.default_value && !conforms(*p.default_value, p.value_type))
      throw Error(Errc::InvalidDescriptor, where + ".default-value",
                  "default does not conform to type " + std::string(to_string(p.value_type)));
  }
  const auto skipped = ignored_ids(d);
  for (const auto& tok : tokenize_template(d.command_line_template)) {
    if (!tok.placeholder) continue;
    const bool known = env_names.count(*tok.placeholder) > 0 || skipped.count(*tok.placeholder) > 0;
    if (!known) throw Error(Errc::InvalidDescriptor, *tok.placeholder, "placeholder has no matching parameter");
  }
}

}  // namespace

std::string_view to_string(ValueType type) noexcept {
  switch (type) {
    case ValueType::Number: return "Number";
    case ValueType::String: return "String";
    case ValueType::Boolean: return "Boolean";
  }
  return "?";
}

std::string to_upper(std::string_view text) {
  std::string out(text);
  for (auto& c : out)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return out;
}

const ParamSpec* WorkflowDescriptor::find(std::string_view id) const noexcept {
  for (const auto& p : params)
    if (p.id == id) return &p;
  return nullptr;
}

WorkflowDescriptor parse_descriptor(std::string_view text) {
  ojson doc;
  try {
    doc = ojson::parse(text.begin(), text.end());
  } catch (const ojson::parse_error& e) {
    throw Error(Errc::MalformedDocument, "document", e.what());
  }
  if (!doc.is_object()) throw Error(Errc::MalformedDocument, "document", "top level must be an object");

  WorkflowDescriptor d;
  d.schema_version = require_string(doc, "schema-version", "");
  if (d.schema_version != kSupportedSchema)
    throw Error(Errc::UnsupportedSchema, "schema-version", "unsupported schema '" + d.schema_version + "'");
  d.name = require_string(doc, "name", "");
  d.command_line_template = require_string(doc, "command-line", "");

  auto image = doc.find("container-image");
  if (image == doc.end() || !image->is_object())
    throw Error(Errc::InvalidDescriptor, "container-image", "expected an object");
  d.container_image = require_string(*image, "image", "container-image.");
  d.container_version = require_string(*image, "version", "container-image.");

  auto inputs = doc.find("inputs");
  if (inputs != doc.end()) {
    if (!inputs->is_array()) throw Error(Errc::InvalidDescriptor, "inputs", "expected an array");
    for (std::size_t i = 0; i < inputs->size(); ++i) {
      const auto& in = (*inputs)[i];
      const std::string where = "inputs[" + std::to_string(i) + "].";
      if (!in.is_object()) throw Error(Errc::InvalidDescriptor, "inputs[" + std::to_string(i) + "]", "expected an object");
      const auto type_text = require_string(in, "type", where);
      const auto type = parse_type(type_text);
      if (!type) {
        d.warnings.push_back("ignored input " + in.value("id", std::string("?")) + " of type '" + type_text + "'");
        d.ignored_inputs.push_back(in);
        continue;
      }
      ParamSpec p;
      p.id = require_string(in, "id", where);
      p.display_name = in.contains("name") ? require_string(in, "name", where) : p.id;
      p.description = in.contains("description") ? require_string(in, "description", where) : std::string{};
      p.value_type = *type;
      p.cli_flag = in.contains("command-line-flag") ? require_string(in, "command-line-flag", where) : std::string{};
      if (auto opt = in.find("optional"); opt != in.end()) {
        if (!opt->is_boolean()) throw Error(Errc::InvalidDescriptor, where + "optional", "expected a boolean");
        p.optional = opt->get<bool>();
      }
      if (auto def = in.find("default-value"); def != in.end() && !def->is_null()) {
        auto value = json_to_value(*def, p.value_type);
        if (!value)
          throw Error(Errc::InvalidDescriptor, where + "default-value",
                      "default does not conform to type " + type_text);
        p.default_value = std::move(value);
      }
      d.params.push_back(std::move(p));
    }
  }

  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const bool known = std::find(std::begin(kKnownMembers), std::end(kKnownMembers), it.key()) !=
                       std::end(kKnownMembers);
    if (!known) d.extra[it.key()] = it.value();
  }

  check_invariants(d);
  return d;
}

std::string serialize_descriptor(const WorkflowDescriptor& d) {
  ojson doc = ojson::object();
  doc["name"] = d.name;
  doc["schema-version"] = d.schema_version;
  doc["container-image"] = {{"image", d.container_image}, {"version", d.container_version}};
  doc["command-line"] = d.command_line_template;
  ojson inputs = ojson::array();
  for (const auto& p : d.params) {
    ojson in = ojson::object();
    in["id"] = p.id;
    in["name"] = p.display_name;
    in["description"] = p.description;
    in["type"] = std::string(to_string(p.value_type));
    if (p.default_value) in["default-value"] = value_to_json(*p.default_value);
    in["command-line-flag"] = p.cli_flag;
    in["optional"] = p.optional;
    inputs.push_back(std::move(in));
  }
  for (const auto& in : d.ignored_inputs) inputs.push_back(in);
  doc["inputs"] = std::move(inputs);
  for (auto it = d.extra.begin(); it != d.extra.end(); ++it) doc[it.key()] = it.value();
  return doc.dump(2) + "\n";
}

ParamValues validate_values(const WorkflowDescriptor& descriptor, const ParamValues& supplied) {
  for (const auto& [id, value] : supplied) {
    const auto* spec = descriptor.find(id);
    if (!spec) throw Error(Errc::UnknownParam, id, "not declared by workflow " + descriptor.name);
    if (!conforms(value, spec->value_type))
      throw Error(Errc::TypeMismatch, id, "expected " + std::string(to_string(spec->value_type)));
  }
  ParamValues result = supplied;
  for (const auto& p : descriptor.params) {
    if (result.count(p.id)) continue;
    if (p.default_value) {
      result.emplace(p.id, *p.default_value);
    } else if (!p.optional) {
      throw Error(Errc::MissingRequiredParam, p.id, "no value supplied and no default");
    }
  }
  return result;
}

ParamValue parse_value(std::string_view param_id, ValueType type, std::string_view text) {
  switch (type) {
    case ValueType::String:
      return std::string(text);
    case ValueType::Boolean:
      if (text == "true" || text == "1" || text == "yes") return true;
      if (text == "false" || text == "0" || text == "no") return false;
      break;
    case ValueType::Number: {
      double v = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec == std::errc{} && ptr == text.data() + text.size() && std::isfinite(v)) return v;
      break;
    }
  }
  throw Error(Errc::TypeMismatch, std::string(param_id),
              "expected " + std::string(to_string(type)) + ", got '" + std::string(text) + "'");
}

std::string render_value(const ParamValue& value) {
  if (const auto* b = std::get_if<bool>(&value)) return *b ? "true" : "false";
  if (const auto* s = std::get_if<std::string>(&value)) return *s;
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, std::get<double>(value));
  return std::string(buf, ptr);
}

std::vector<std::string> render_cli_args(const WorkflowDescriptor& descriptor, const ParamValues& values) {
  std::vector<std::string> args;
  for (auto& tok : tokenize_template(descriptor.command_line_template)) {
    if (!tok.placeholder) {
      args.push_back(std::move(tok.text));
      continue;
    }
    const ParamSpec* spec = nullptr;
    for (const auto& p : descriptor.params)
      if (to_upper(p.id) == *tok.placeholder) spec = &p;
    if (!spec) continue;  // image-domain input, routed by the orchestrator
    auto it = values.find(spec->id);
    if (it == values.end()) continue;
    if (const auto* flag = std::get_if<bool>(&it->second)) {
      if (*flag && !spec->cli_flag.empty()) args.push_back(spec->cli_flag);
      continue;
    }
    if (!spec->cli_flag.empty()) args.push_back(spec->cli_flag);
    args.push_back(render_value(it->second));
  }
  return args;
}

EnvList env_assignments(const WorkflowDescriptor& descriptor, const ParamValues& values) {
  EnvList env;
  for (const auto& p : descriptor.params) {
    auto it = values.find(p.id);
    if (it != values.end()) env.emplace_back(to_upper(p.id), render_value(it->second));
  }
  return env;
}

std::vector<FormEntry> describe_form(const WorkflowDescriptor& descriptor) {
  std::vector<FormEntry> form;
  form.reserve(descriptor.params.size());
  for (const auto& p : descriptor.params)
    form.push_back({p.id, p.display_name, p.value_type, p.default_value, p.description, p.required()});
  return form;
}

}  // namespace slurmbridge
