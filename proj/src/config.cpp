#include "colearn/config.hpp"

#include "colearn/csv.hpp"

#include <cstdio>
#include <set>

namespace colearn {

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
    std::string s = "invalid configuration:";
    for (const auto& p : problems) s += "\n  - " + p;
    return s;
}

// Reads fields of one JSON object, recording problems instead of throwing.
class Reader {
public:
    Reader(const nlohmann::json& j, std::string prefix, std::vector<std::string>& problems)
        : j_(j), prefix_(std::move(prefix)), problems_(problems) {
        if (!j_.is_object()) problem("", "must be an object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        used_.insert(key);
        if (!j_.is_object() || !j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            problem(key, "has the wrong type (" + std::string(j_.at(key).type_name()) + ")");
        }
    }

    void path(const std::string& key, std::filesystem::path& out) {
        std::string s = out.string();
        get(key, s);
        out = s;
    }

    const nlohmann::json* child(const std::string& key) {
        used_.insert(key);
        if (!j_.is_object() || !j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    void check(bool ok, const std::string& key, const std::string& message) {
        if (!ok) problem(key, message);
    }

    std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    void finish() {
        if (!j_.is_object()) return;
        for (const auto& item : j_.items())
            if (!used_.count(item.key())) problem(item.key(), "is not a recognised setting");
    }

    void problem(const std::string& key, const std::string& message) {
        problems_.push_back((key.empty() ? (prefix_.empty() ? std::string("config") : prefix_) : name(key)) + " " +
                            message);
    }

private:
    const nlohmann::json& j_;
    std::string prefix_;
    std::vector<std::string>& problems_;
    std::set<std::string> used_;
};

void read_dataset(const nlohmann::json& j, DatasetSpec& d, std::vector<std::string>& problems) {
    Reader r(j, "dataset", problems);
    r.get("kind", d.kind);
    r.path("images", d.images);
    r.path("labels", d.labels);
    r.get("subset", d.subset);
    r.get("test_fraction", d.test_fraction);
    r.get("classes", d.classes);
    r.get("dim", d.dim);
    r.get("separation", d.separation);
    r.get("per_class", d.per_class);
    r.finish();
    r.check(d.kind == "mnist" || d.kind == "gaussian", "kind", "must be \"mnist\" or \"gaussian\"");
    r.check(d.subset >= 0, "subset", "must be >= 0");
    r.check(d.test_fraction > 0 && d.test_fraction < 1, "test_fraction", "must lie in (0, 1)");
    if (d.kind == "gaussian") {
        r.check(d.classes >= 2, "classes", "must be >= 2");
        r.check(d.dim >= d.classes - 1, "dim", "must be >= classes - 1");
        r.check(d.separation > 0, "separation", "must be > 0");
        r.check(d.per_class >= 1, "per_class", "must be >= 1");
    }
}

void read_model(const nlohmann::json& j, ModelSpec& m, std::vector<std::string>& problems) {
    Reader r(j, "model", problems);
    r.get("kind", m.kind);
    r.get("hidden", m.hidden);
    r.finish();
    r.check(m.kind == "lenet5" || m.kind == "mlp", "kind", "must be \"lenet5\" or \"mlp\"");
    for (auto h : m.hidden) r.check(h >= 1, "hidden", "widths must be >= 1");
}

void read_train(const nlohmann::json& j, TrainConfig& t, std::vector<std::string>& problems) {
    Reader r(j, "train", problems);
    std::string schedule = to_string(t.schedule.kind);
    r.get("batch_size", t.batch_size);
    r.get("momentum", t.momentum);
    r.get("weight_decay", t.weight_decay);
    r.get("epochs", t.epochs);
    r.get("lr", t.schedule.eta0);
    r.get("schedule", schedule);
    r.get("step_epochs", t.schedule.step_epochs);
    r.get("step_factor", t.schedule.step_factor);
    r.get("shuffle", t.shuffle);
    r.get("augment", t.augment);
    r.get("decay_biases", t.decay_biases);
    r.get("eval_every", t.eval_every);
    r.get("snapshot_every", t.snapshot_every);
    r.get("probe_size", t.probe_size);
    r.finish();
    try {
        t.schedule.kind = schedule_kind_from_string(schedule);
    } catch (const std::invalid_argument&) {
        r.problem("schedule", "must be constant, step or cosine");
    }
    t.schedule.t_max = std::max(1, t.epochs);
    try {
        t.validate();
    } catch (const std::exception& e) {
        problems.push_back(e.what());
    }
}

void read_run(Reader& r, RunSpec& run, std::vector<std::string>& problems) {
    r.get("seed", run.seed);
    r.path("out", run.out);
    r.get("threads", run.threads);
    r.get("precision", run.precision);
    r.get("svg", run.svg);
    if (const auto* d = r.child("dataset")) read_dataset(*d, run.dataset, problems);
    if (const auto* m = r.child("model")) read_model(*m, run.model, problems);
    if (const auto* t = r.child("train")) read_train(*t, run.train, problems);
    run.train.schedule.t_max = std::max(1, run.train.epochs);
    r.check(run.threads >= 1, "threads", "must be >= 1");
    r.check(run.precision == "float" || run.precision == "double", "precision", "must be \"float\" or \"double\"");
    r.check(!run.out.empty(), "out", "must not be empty");
    if (run.model.kind == "lenet5" && run.dataset.kind == "gaussian")
        problems.push_back("model lenet5 needs image data; use model.kind=mlp with the gaussian dataset");
}

nlohmann::json run_to_json(const RunSpec& run) {
    const auto& d = run.dataset;
    const auto& t = run.train;
    return {
        {"seed", run.seed},
        {"out", run.out.string()},
        {"threads", run.threads},
        {"precision", run.precision},
        {"svg", run.svg},
        {"dataset",
         {{"kind", d.kind},
          {"images", d.images.string()},
          {"labels", d.labels.string()},
          {"subset", d.subset},
          {"test_fraction", d.test_fraction},
          {"classes", d.classes},
          {"dim", d.dim},
          {"separation", d.separation},
          {"per_class", d.per_class}}},
        {"model", {{"kind", run.model.kind}, {"hidden", run.model.hidden}}},
        {"train",
         {{"batch_size", t.batch_size},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"epochs", t.epochs},
          {"lr", t.schedule.eta0},
          {"schedule", to_string(t.schedule.kind)},
          {"step_epochs", t.schedule.step_epochs},
          {"step_factor", t.schedule.step_factor},
          {"shuffle", t.shuffle},
          {"augment", t.augment},
          {"decay_biases", t.decay_biases},
          {"eval_every", t.eval_every},
          {"snapshot_every", t.snapshot_every},
          {"probe_size", t.probe_size}}},
    };
}

void throw_if(const std::vector<std::string>& problems) {
    if (!problems.empty()) throw ConfigError(problems);
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(join_problems(problems)), problems_(std::move(problems)) {}

std::string to_string(ExpansionMode mode) {
    switch (mode) {
        case ExpansionMode::add_freeze:
            return "add-freeze";
        case ExpansionMode::add_retrain:
            return "add-retrain";
        case ExpansionMode::retrain_scratch:
            return "retrain-scratch";
        case ExpansionMode::boundary_boost:
            return "boundary-boost";
    }
    return "unknown";
}

ExpansionMode expansion_mode_from_string(const std::string& name) {
    for (auto m : {ExpansionMode::add_freeze, ExpansionMode::add_retrain, ExpansionMode::retrain_scratch,
                   ExpansionMode::boundary_boost})
        if (to_string(m) == name) return m;
    throw std::invalid_argument("unknown expansion mode '" + name + "'");
}

void apply_overrides(nlohmann::json& config, const std::vector<std::string>& assignments) {
    std::vector<std::string> problems;
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) {
            problems.push_back("override '" + a + "' is not of the form key=value");
            continue;
        }
        const std::string key = a.substr(0, eq);
        const std::string text = a.substr(eq + 1);
        nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        nlohmann::json* node = &config;
        std::size_t start = 0;
        bool ok = true;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty()) {
                problems.push_back("override key '" + key + "' has an empty component");
                ok = false;
                break;
            }
            if (!node->is_object()) {
                if (!node->is_null()) {
                    problems.push_back("override '" + key + "' descends into a non-object value");
                    ok = false;
                    break;
                }
                *node = nlohmann::json::object();
            }
            node = &(*node)[part];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        if (ok) *node = value;
    }
    throw_if(problems);
}

SweepConfig sweep_config_from_json(const nlohmann::json& j) {
    SweepConfig c;
    std::vector<std::string> problems;
    Reader r(j, "", problems);
    read_run(r, c.run, problems);
    r.get("sizes", c.sizes);
    r.get("betas", c.betas);
    r.get("normalized", c.normalized);
    r.get("repeats", c.repeats);
    r.get("save_checkpoints", c.save_checkpoints);
    r.finish();
    r.check(!c.sizes.empty(), "sizes", "must not be empty");
    for (int n : c.sizes) r.check(n >= 1, "sizes", "entries must be >= 1 (got " + std::to_string(n) + ")");
    r.check(!c.betas.empty(), "betas", "must not be empty");
    r.check(c.repeats >= 1, "repeats", "must be >= 1");
    throw_if(problems);
    return c;
}

ExpansionConfig expansion_config_from_json(const nlohmann::json& j) {
    ExpansionConfig c;
    std::vector<std::string> problems;
    Reader r(j, "", problems);
    read_run(r, c.run, problems);
    std::vector<std::string> modes;
    for (auto m : c.modes) modes.push_back(to_string(m));
    r.path("base", c.base);
    r.get("extra", c.extra);
    r.get("modes", modes);
    r.get("m", c.m);
    r.get("beta_bar", c.beta_bar);
    r.get("scratch_epoch_factor", c.scratch_epoch_factor);
    r.finish();
    c.modes.clear();
    for (const auto& name : modes) {
        try {
            c.modes.push_back(expansion_mode_from_string(name));
        } catch (const std::invalid_argument& e) {
            r.problem("modes", e.what());
        }
    }
    r.check(!c.base.empty(), "base", "must name a checkpoint");
    r.check(c.extra >= 0, "extra", "must be >= 0");
    r.check(!c.modes.empty(), "modes", "must not be empty");
    r.check(c.m >= 0, "m", "must be >= 0");
    r.check(c.scratch_epoch_factor > 0, "scratch_epoch_factor", "must be > 0");
    throw_if(problems);
    return c;
}

TrainRunConfig train_config_from_json(const nlohmann::json& j) {
    TrainRunConfig c;
    std::vector<std::string> problems;
    Reader r(j, "", problems);
    read_run(r, c.run, problems);
    r.get("size", c.size);
    r.get("beta", c.beta);
    r.get("normalized", c.normalized);
    r.get("checkpoint_every", c.checkpoint_every);
    r.finish();
    r.check(c.size >= 1, "size", "must be >= 1");
    r.check(c.checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
    throw_if(problems);
    return c;
}

nlohmann::json to_json(const SweepConfig& c) {
    auto j = run_to_json(c.run);
    j["sizes"] = c.sizes;
    j["betas"] = c.betas;
    j["normalized"] = c.normalized;
    j["repeats"] = c.repeats;
    j["save_checkpoints"] = c.save_checkpoints;
    return j;
}

nlohmann::json to_json(const ExpansionConfig& c) {
    auto j = run_to_json(c.run);
    j["base"] = c.base.string();
    j["extra"] = c.extra;
    std::vector<std::string> modes;
    for (auto m : c.modes) modes.push_back(to_string(m));
    j["modes"] = modes;
    j["m"] = c.m;
    j["beta_bar"] = c.beta_bar;
    j["scratch_epoch_factor"] = c.scratch_epoch_factor;
    return j;
}

nlohmann::json to_json(const TrainRunConfig& c) {
    auto j = run_to_json(c.run);
    j["size"] = c.size;
    j["beta"] = c.beta;
    j["normalized"] = c.normalized;
    j["checkpoint_every"] = c.checkpoint_every;
    return j;
}

std::string config_hash(const nlohmann::json& config) {
    // nlohmann::json objects are key-sorted, so dump() is canonical.
    const std::string text = config.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json load_json(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw ConfigError({"cannot read " + path.string() + ": " + e.what()});
    }
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError({path.string() + " is not valid JSON"});
    return j;
}

}  // namespace colearn
