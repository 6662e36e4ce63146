#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

namespace slurmbridge {

inline constexpr std::string_view kSupportedSchema = "cytomine-0.1";

enum class ValueType { Number, String, Boolean };

std::string_view to_string(ValueType type) noexcept;

/// A typed parameter value. The alternative index must agree with the
/// parameter's ValueType (double <-> Number, string <-> String, bool <-> Boolean).
using ParamValue = std::variant<double, std::string, bool>;

/// Parameter id -> value.
using ParamValues = std::map<std::string, ParamValue>;

using EnvList = std::vector<std::pair<std::string, std::string>>;

struct ParamSpec {
  std::string id;
  std::string display_name;
  std::string description;
  ValueType value_type = ValueType::String;
  std::optional<ParamValue> default_value;
  std::string cli_flag;
  bool optional = false;

  bool required() const noexcept { return !optional && !default_value.has_value(); }
  bool operator==(const ParamSpec&) const = default;
};

struct WorkflowDescriptor {
  std::string name;
  std::string schema_version;
  std::string container_image;
  std::string container_version;
  std::string command_line_template;
  std::vector<ParamSpec> params;

  // Inputs whose type is outside {Number, String, Boolean}; kept verbatim so
  // serialization reproduces them, never rendered.
  std::vector<nlohmann::ordered_json> ignored_inputs;
  // Unknown top-level members, preserved in document order.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
  std::vector<std::string> warnings;

  const ParamSpec* find(std::string_view id) const noexcept;
  bool operator==(const WorkflowDescriptor&) const = default;
};

/// Parses a descriptor document and checks every descriptor invariant.
/// Throws Error{MalformedDocument | UnsupportedSchema | InvalidDescriptor}.
WorkflowDescriptor parse_descriptor(std::string_view text);

/// Inverse of parse_descriptor (pretty-printed, member order fixed).
std::string serialize_descriptor(const WorkflowDescriptor& descriptor);

/// Checks supplied values against the descriptor and fills defaults.
/// Throws Error{UnknownParam | TypeMismatch | MissingRequiredParam}.
ParamValues validate_values(const WorkflowDescriptor& descriptor, const ParamValues& supplied);

/// Parses the textual form of a value (e.g. from `--param id=value`) according to `type`.
/// Throws Error{TypeMismatch} naming `param_id`.
ParamValue parse_value(std::string_view param_id, ValueType type, std::string_view text);

/// Shortest round-trip decimal for numbers, "true"/"false" for booleans.
std::string render_value(const ParamValue& value);

/// Substitutes each `[PARAM_ID]` token of the command-line template with the
/// flag/value pair of its parameter. Booleans render as flag presence.
std::vector<std::string> render_cli_args(const WorkflowDescriptor& descriptor, const ParamValues& values);

/// One (UPPERCASED_ID, rendered value) pair per valued parameter, in descriptor order.
EnvList env_assignments(const WorkflowDescriptor& descriptor, const ParamValues& values);

struct FormEntry {
  std::string id;
  std::string label;
  ValueType type = ValueType::String;
  std::optional<ParamValue> default_value;
  std::string help;
  bool required = false;
};

std::vector<FormEntry> describe_form(const WorkflowDescriptor& descriptor);

/// Upper-cases ASCII letters; used for placeholder and environment names.
std::string to_upper(std::string_view text);

}  // namespace slurmbridge
