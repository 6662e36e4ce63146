#include <doctest.h>

#include <random>
#include <set>

#include "slurmbridge/descriptor.hpp"
#include "properties.hpp"
#include "slurmbridge/error.hpp"

using namespace slurmbridge;

namespace {

std::string doc(const std::string& command_line, const std::string& inputs, const std::string& schema = "cytomine-0.1") {
  return R"({"name":"W_NucleiSegmentation-Cellpose","schema-version":")" + schema +
         R"(","container-image":{"image":"ns/w_nucleisegmentation-cellpose","version":"v1.0.0"},"command-line":")" +
         command_line + R"(","inputs":[)" + inputs + "]}";
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::CorruptArchive;
}

std::string subject_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.subject();
  }
  FAIL("expected an Error");
  return {};
}

ParamSpec number(std::string id, std::optional<double> def = {}, std::string flag = {}) {
  ParamSpec p;
  p.id = std::move(id);
  p.display_name = p.id;
  p.value_type = ValueType::Number;
  if (def) p.default_value = *def;
  p.cli_flag = std::move(flag);
  return p;
}

ParamSpec boolean(std::string id, std::optional<bool> def = {}, std::string flag = {}) {
  auto p = number(std::move(id), std::nullopt, std::move(flag));
  p.value_type = ValueType::Boolean;
  if (def) p.default_value = *def;
  return p;
}

WorkflowDescriptor descriptor_of(std::string tmpl, std::vector<ParamSpec> params) {
  WorkflowDescriptor d;
  d.name = "wf";
  d.schema_version = "cytomine-0.1";
  d.container_image = "ns/wf";
  d.container_version = "v1";
  d.command_line_template = std::move(tmpl);
  d.params = std::move(params);
  return d;
}

}  // namespace

TEST_SUITE("descriptor.parse") {
  TEST_CASE("cellpose descriptor with one Number param") {
    const auto d = parse_descriptor(
        doc("python run.py [DIAMETER]",
            R"({"id":"diameter","name":"Diameter","type":"Number","default-value":30,"command-line-flag":"--diameter"})"));
    CHECK(d.name == "W_NucleiSegmentation-Cellpose");
    REQUIRE(d.params.size() == 1);
    CHECK(d.params[0].id == "diameter");
    CHECK(d.params[0].value_type == ValueType::Number);
    CHECK(std::get<double>(*d.params[0].default_value) == 30.0);
  }

  TEST_CASE("empty params and placeholder-free template") {
    const auto d = parse_descriptor(doc("python run.py", ""));
    CHECK(d.params.empty());
  }

  TEST_CASE("dangling placeholder names the placeholder") {
    const auto f = [] { parse_descriptor(doc("run [RADIUS]", "")); };
    CHECK(code_of(f) == Errc::InvalidDescriptor);
    CHECK(subject_of(f) == "RADIUS");
  }

  TEST_CASE("errors") {
    CHECK(code_of([] { parse_descriptor("{not json"); }) == Errc::MalformedDocument);
    CHECK(code_of([] { parse_descriptor(doc("run", "", "cytomine-0.2")); }) == Errc::UnsupportedSchema);
    CHECK(subject_of([] { parse_descriptor(doc("run", "", "boutiques")); }) == "schema-version");
    CHECK(code_of([] {
            parse_descriptor(doc("run", R"({"id":"a","type":"Number"},{"id":"a","type":"String"})"));
          }) == Errc::InvalidDescriptor);
    const auto bad_default = [] { parse_descriptor(doc("run", R"({"id":"a","type":"Number","default-value":"x"})")); };
    CHECK(code_of(bad_default) == Errc::InvalidDescriptor);
    CHECK(subject_of(bad_default) == "inputs[0].default-value");
    CHECK(code_of([] { parse_descriptor(doc("run", R"({"id":"Bad","type":"Number"})")); }) == Errc::InvalidDescriptor);
    CHECK(code_of([] { parse_descriptor(doc("run", R"({"id":"in_path","type":"String"})")); }) ==
          Errc::InvalidDescriptor);
  }

  TEST_CASE("image inputs are ignored with a warning, unknown members kept") {
    const auto text = R"({"name":"x","schema-version":"cytomine-0.1","custom":{"k":1},
      "container-image":{"image":"ns/x","version":"1"},"command-line":"run [IMG] [A]",
      "inputs":[{"id":"img","type":"Image"},{"id":"a","type":"String","default-value":"q"}]})";
    const auto d = parse_descriptor(text);
    CHECK(d.params.size() == 1);
    CHECK(d.ignored_inputs.size() == 1);
    CHECK(d.warnings.size() == 1);
    CHECK(d.extra.contains("custom"));
    CHECK(render_cli_args(d, validate_values(d, {})) == std::vector<std::string>{"run", "q"});
  }
}

TEST_SUITE("descriptor.validate_values") {
  TEST_CASE("defaults") {
    const auto d = descriptor_of("run", {number("diameter", 30)});
    const auto v = validate_values(d, {});
    CHECK(v == ParamValues{{"diameter", 30.0}});
  }

  TEST_CASE("missing required param") {
    auto p = number("threshold");
    const auto d = descriptor_of("run", {p});
    const auto f = [&] { validate_values(d, {}); };
    CHECK(code_of(f) == Errc::MissingRequiredParam);
    CHECK(subject_of(f) == "threshold");
  }

  TEST_CASE("partial supply, defaults applied per param") {
    const auto d = descriptor_of("run", {number("a", 1), boolean("b", false)});
    CHECK(validate_values(d, {{"b", true}}) == ParamValues{{"a", 1.0}, {"b", true}});
  }

  TEST_CASE("type mismatch and unknown param") {
    const auto d = descriptor_of("run", {number("a", 1)});
    CHECK(code_of([&] { validate_values(d, {{"a", std::string("x")}}); }) == Errc::TypeMismatch);
    CHECK(code_of([&] { validate_values(d, {{"zz", 1.0}}); }) == Errc::UnknownParam);
    CHECK(subject_of([&] { validate_values(d, {{"zz", 1.0}}); }) == "zz");
  }

  TEST_CASE("optional without default stays absent") {
    auto p = number("o");
    p.optional = true;
    CHECK(validate_values(descriptor_of("run", {p}), {}).empty());
  }
}

TEST_SUITE("descriptor.render") {
  TEST_CASE("direct substitution") {
    const auto d = descriptor_of("run [DIAMETER]", {number("diameter", {}, "--diameter")});
    CHECK(render_cli_args(d, {{"diameter", 30.0}}) == std::vector<std::string>{"run", "--diameter", "30"});
  }

  TEST_CASE("false boolean omitted, true boolean is the flag alone") {
    const auto d = descriptor_of("run [USE_GPU]", {boolean("use_gpu", {}, "--gpu")});
    CHECK(render_cli_args(d, {{"use_gpu", false}}) == std::vector<std::string>{"run"});
    CHECK(render_cli_args(d, {{"use_gpu", true}}) == std::vector<std::string>{"run", "--gpu"});
  }

  TEST_CASE("two placeholders") {
    const auto d = descriptor_of("seg [DIAMETER] [PROB]",
                                 {number("diameter", {}, "--diameter"), number("prob", {}, "--prob_threshold")});
    CHECK(render_cli_args(d, {{"diameter", 17.0}, {"prob", 0.5}}) ==
          std::vector<std::string>{"seg", "--diameter", "17", "--prob_threshold", "0.5"});
  }

  TEST_CASE("shortest round-trip numbers") {
    CHECK(render_value(0.1) == "0.1");
    CHECK(render_value(1e21) == "1e+21");
    CHECK(render_value(-3.0) == "-3");
    CHECK(render_value(true) == "true");
    CHECK(render_value(std::string("a b")) == "a b");
  }

  TEST_CASE("env assignments") {
    const auto one = descriptor_of("run", {number("diameter")});
    CHECK(env_assignments(one, {{"diameter", 30.0}}) == EnvList{{"DIAMETER", "30"}});
    CHECK(env_assignments(descriptor_of("run", {}), {}).empty());
    const auto two = descriptor_of("run", {number("diameter"), boolean("use_gpu")});
    CHECK(env_assignments(two, {{"use_gpu", true}, {"diameter", 17.0}}) ==
          EnvList{{"DIAMETER", "17"}, {"USE_GPU", "true"}});
  }

  TEST_CASE("parse_value") {
    CHECK(std::get<double>(parse_value("a", ValueType::Number, "2.5")) == 2.5);
    CHECK(std::get<bool>(parse_value("a", ValueType::Boolean, "true")));
    CHECK(std::get<std::string>(parse_value("a", ValueType::String, "x y")) == "x y");
    CHECK(code_of([] { parse_value("a", ValueType::Number, "abc"); }) == Errc::TypeMismatch);
    CHECK(code_of([] { parse_value("a", ValueType::Boolean, "yes please"); }) == Errc::TypeMismatch);
  }
}

TEST_SUITE("descriptor.form") {
  TEST_CASE("one, zero and three params") {
    auto p = number("diameter", 30);
    p.display_name = "Diameter";
    auto f1 = describe_form(descriptor_of("run", {p}));
    REQUIRE(f1.size() == 1);
    CHECK(f1[0].label == "Diameter");
    CHECK(std::get<double>(*f1[0].default_value) == 30.0);
    CHECK(describe_form(descriptor_of("run", {})).empty());
    auto f3 = describe_form(descriptor_of("run", {number("c"), number("a"), number("b")}));
    REQUIRE(f3.size() == 3);
    CHECK(f3[0].id == "c");
    CHECK(f3[1].id == "a");
    CHECK(f3[2].id == "b");
  }
}

TEST_SUITE("descriptor.properties") {
  TEST_CASE("200 generated descriptors round-trip") {
    testing::DescriptorGen g{std::mt19937_64{20240501}};
    for (int i = 0; i < 200; ++i) {
      const auto why = testing::check_descriptor_round_trip(g.descriptor());
      CHECK_MESSAGE(why.empty(), why);
    }
  }

  TEST_CASE("token provenance, idempotence, env/cli agreement") {
    testing::DescriptorGen g{std::mt19937_64{7}};
    for (int i = 0; i < 200; ++i) {
      const auto d = g.descriptor();
      const auto supplied = g.supplied_for(d);
      const auto idem = testing::check_validate_idempotent(d, supplied);
      CHECK_MESSAGE(idem.empty(), idem);
      const auto prov = testing::check_token_provenance(d, validate_values(d, supplied));
      CHECK_MESSAGE(prov.empty(), prov);
    }
  }
}
