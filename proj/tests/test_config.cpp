#include "colearn/config.hpp"
#include "colearn/csv.hpp"

#include <doctest.h>

#include <algorithm>

using namespace colearn;
using nlohmann::json;

namespace {

std::vector<std::string> problems_of(const json& j) {
    try {
        sweep_config_from_json(j);
    } catch (const ConfigError& e) {
        return e.problems();
    }
    return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& text) {
    return std::any_of(problems.begin(), problems.end(),
                       [&](const std::string& p) { return p.find(text) != std::string::npos; });
}

}  // namespace

TEST_CASE("an empty document gives the defaults") {
    const auto c = sweep_config_from_json(json::object());
    CHECK(c.run.seed == 1);
    CHECK(c.run.threads == 1);
    CHECK(c.run.precision == "float");
    CHECK(c.run.dataset.kind == "mnist");
    CHECK(c.run.model.kind == "lenet5");
    CHECK(c.run.train.batch_size == 128);
    CHECK(c.run.train.epochs == 30);
    CHECK(c.run.train.schedule.t_max == 30);
    CHECK(c.sizes == std::vector<int>{2});
    CHECK(c.normalized);
}

TEST_CASE("overrides address nested keys and parse JSON values") {
    json j = {{"train", {{"epochs", 3}}}};
    apply_overrides(j, {"train.epochs=7", "train.lr=0.5", "sizes=[2,4]", "dataset.kind=gaussian", "svg=true",
                        "model.kind=mlp", "model.hidden=[16,8]"});
    CHECK(j["train"]["epochs"] == 7);
    CHECK(j["train"]["lr"] == 0.5);
    CHECK(j["sizes"] == json::array({2, 4}));
    CHECK(j["dataset"]["kind"] == "gaussian");  // not JSON, kept as a string
    CHECK(j["svg"] == true);
    const auto c = sweep_config_from_json(j);
    CHECK(c.run.train.epochs == 7);
    CHECK(c.run.train.schedule.t_max == 7);
    CHECK(c.run.train.schedule.eta0 == 0.5);
    CHECK(c.run.model.hidden == std::vector<Index>{16, 8});
}

TEST_CASE("a value that is a quoted JSON string stays a string") {
    json j = json::object();
    apply_overrides(j, {"out=\"runs/x\"", "precision=double"});
    CHECK(j["out"] == "runs/x");
    CHECK(j["precision"] == "double");
}

TEST_CASE("malformed overrides are all reported") {
    json j = {{"seed", 3}};
    try {
        apply_overrides(j, {"noequals", "=5", "a..b=1", "seed.x=2"});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.problems().size() == 4);
        CHECK(mentions(e.problems(), "noequals"));
        CHECK(mentions(e.problems(), "empty component"));
        CHECK(mentions(e.problems(), "non-object"));
    }
}

TEST_CASE("every problem in a config is reported at once") {
    const json j = {{"sizes", json::array({0, 2})},
                    {"betas", json::array()},
                    {"repeats", 0},
                    {"threads", 0},
                    {"precision", "half"},
                    {"bogus", 1},
                    {"dataset", {{"kind", "cifar"}, {"test_fraction", 1.5}, {"extra", 2}}},
                    {"model", {{"kind", "resnet"}}},
                    {"train", {{"batch_size", 0}, {"schedule", "linear"}}}};
    const auto problems = problems_of(j);
    CHECK(problems.size() >= 11);
    for (const char* key : {"sizes", "betas", "repeats", "threads", "precision", "bogus", "dataset.kind",
                            "dataset.test_fraction", "dataset.extra", "model.kind", "train.schedule"})
        CHECK_MESSAGE(mentions(problems, key), key);
}

TEST_CASE("type errors name the field and the type found") {
    const auto problems = problems_of({{"seed", "abc"}, {"train", {{"epochs", "ten"}}}});
    REQUIRE(problems.size() == 2);
    CHECK(mentions(problems, "seed has the wrong type (string)"));
    CHECK(mentions(problems, "train.epochs has the wrong type (string)"));
}

TEST_CASE("LeNet-5 needs image data") {
    const auto problems = problems_of({{"dataset", {{"kind", "gaussian"}}}});
    CHECK(mentions(problems, "lenet5"));
    CHECK(problems_of({{"dataset", {{"kind", "gaussian"}}}, {"model", {{"kind", "mlp"}}}}).empty());
}

TEST_CASE("to_json round trips through the parser") {
    json j = json::object();
    apply_overrides(j, {"sizes=[2,3,5]", "betas=[-1.5,0.25]", "repeats=4", "normalized=false", "seed=99",
                        "dataset.kind=gaussian", "model.kind=mlp", "train.schedule=cosine", "train.momentum=0.5"});
    const auto c = sweep_config_from_json(j);
    const auto dumped = to_json(c);
    CHECK(to_json(sweep_config_from_json(dumped)) == dumped);
    CHECK(dumped["seed"] == 99);
    CHECK(dumped["normalized"] == false);
    CHECK(dumped["train"]["schedule"] == "cosine");

    ExpansionConfig e;
    e.base = "base.json";
    e.modes = {ExpansionMode::boundary_boost};
    e.m = 1;
    CHECK(to_json(expansion_config_from_json(to_json(e))) == to_json(e));
    TrainRunConfig t;
    t.size = 5;
    t.checkpoint_every = 2;
    CHECK(to_json(train_config_from_json(to_json(t))) == to_json(t));
}

TEST_CASE("config hash is canonical") {
    const json a = {{"x", 1}, {"y", {{"b", 2}, {"a", 3}}}};
    const json b = json::parse(R"({"y": {"a": 3, "b": 2}, "x": 1})");
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    json c = a;
    c["x"] = 2;
    CHECK(config_hash(c) != config_hash(a));
}

TEST_CASE("expansion config parsing") {
    CHECK(expansion_mode_from_string("add-freeze") == ExpansionMode::add_freeze);
    CHECK(to_string(ExpansionMode::retrain_scratch) == "retrain-scratch");
    CHECK_THROWS_AS(expansion_mode_from_string("grow"), std::invalid_argument);
    try {
        expansion_config_from_json({{"modes", {"grow"}}, {"extra", -1}, {"m", -1}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(mentions(e.problems(), "grow"));
        CHECK(mentions(e.problems(), "base"));
        CHECK(mentions(e.problems(), "extra"));
        CHECK(mentions(e.problems(), "m must"));
    }
}

TEST_CASE("coupling from a grid value") {
    const auto norm = coupling_for<double>(-1.0, 4, true);
    const auto raw = coupling_for<double>(-1.0, 4, false);
    CHECK(norm(0, 1) == doctest::Approx(-0.25));
    CHECK(raw(0, 1) == -1.0);
    CHECK(norm(2, 2) == 0.0);
    CHECK(norm.row_sum(0) == doctest::Approx(-0.75));
}

TEST_CASE("load_json reports unreadable and malformed files") {
    CHECK_THROWS_AS(load_json("/nonexistent/config.json"), ConfigError);
    const auto path = std::filesystem::temp_directory_path() / "colearn_bad_config.json";
    atomic_write(path, "{ not json");
    CHECK_THROWS_AS(load_json(path), ConfigError);
    std::filesystem::remove(path);
}
