#include "colearn/experiment.hpp"

#include "run_io.hpp"
#include "colearn/svg.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>

namespace colearn {

namespace {

namespace fs = std::filesystem;

struct Source {
    fs::path dir;
    std::string name;  // relative to the report root
    nlohmann::json manifest;
};

std::optional<double> cell_number(const CsvTable& t, std::size_t row, std::string_view col) {
    const auto& s = t.cell(row, col);
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}

// Mean of each named column over the rows of one group.
struct Group {
    std::map<std::string, std::vector<double>> values;

    void add(const std::string& key, std::optional<double> v) {
        if (v) values[key].push_back(*v);
    }
    std::optional<double> mean(const std::string& key) const {
        const auto it = values.find(key);
        if (it == values.end() || it->second.empty()) return std::nullopt;
        return detail::mean_of(it->second);
    }
    std::optional<double> std(const std::string& key) const {
        const auto it = values.find(key);
        if (it == values.end()) return std::nullopt;
        return detail::sample_std(it->second);
    }
    std::size_t count(const std::string& key) const {
        const auto it = values.find(key);
        return it == values.end() ? 0 : it->second.size();
    }
};

std::vector<Source> find_sources(const fs::path& root, std::vector<std::string>& gaps) {
    std::vector<Source> out;
    if (!fs::is_directory(root)) return out;
    const fs::path report = root / "report";
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        if (it->is_directory() && it->path() == report) {
            it.disable_recursion_pending();
            continue;
        }
        if (it->path().filename() != "manifest.json") continue;
        Source s;
        s.dir = it->path().parent_path();
        s.name = fs::relative(s.dir, root).generic_string();
        auto j = nlohmann::json::parse(read_file(it->path()), nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            gaps.push_back(s.name + ": manifest.json is not valid JSON");
            continue;
        }
        s.manifest = std::move(j);
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const Source& a, const Source& b) { return a.name < b.name; });
    return out;
}

std::optional<CsvTable> load_table(const Source& s, const std::string& file, std::vector<std::string>& gaps) {
    const auto path = s.dir / file;
    if (!fs::exists(path)) {
        gaps.push_back(s.name + ": missing " + file);
        return std::nullopt;
    }
    return CsvTable::load(path);
}

using Key = std::tuple<int, double, std::string>;  // size, beta_bar, combiner or layer

}  // namespace

ReportResult emit_report(const fs::path& run_dir, bool svg) {
    ReportResult result;
    std::vector<std::string> gaps;
    const auto sources = find_sources(run_dir, gaps);
    const fs::path out = run_dir / "report";
    detail::prepare_output_dir(out);

    const std::vector<std::string> metric_columns = {"ensemble_accuracy", "individual_mean", "dissimilarity",
                                                     "confidence_mass", "mean_entropy", "vote_spearman",
                                                     "wall_mass", "mds_final", "mds_trajectory"};
    std::map<Key, Group> by_combiner;
    std::map<Key, Group> sparsity_groups;
    std::map<Key, Group> weight_groups;

    CsvWriter runs;
    bool runs_header = false;
    CsvWriter expansion;
    expansion.header({"source", "mode", "base_size", "extra", "epochs", "train_samples", "combiner", "base_accuracy",
                      "accuracy"});
    std::size_t expansion_rows = 0;

    for (const auto& s : sources) {
        const std::string kind = s.manifest.value("kind", std::string());
        if (kind == "sweep" || kind == "scale") {
            ++result.sources;
            const auto table = load_table(s, "sweep.csv", gaps);
            if (!table) continue;
            const auto expected = s.manifest.value("expected_rows", std::size_t{0});
            if (table->rows.size() < expected)
                gaps.push_back(s.name + ": partial sweep, " + std::to_string(table->rows.size()) + " of " +
                               std::to_string(expected) + " rows");
            for (const auto& d : s.manifest.value("diverged", nlohmann::json::array()))
                gaps.push_back(s.name + ": diverged at N=" + d.value("size", nlohmann::json()).dump() + " beta_bar=" +
                               d.value("beta_bar", nlohmann::json()).dump() + " repeat " +
                               d.value("repeat", nlohmann::json()).dump());
            if (!runs_header) {
                auto header = table->columns;
                header.insert(header.begin(), "source");
                runs.header(header);
                runs_header = true;
            }
            for (std::size_t r = 0; r < table->rows.size(); ++r) {
                auto row = runs.row();
                row.str(s.name);
                for (const auto& c : table->rows[r]) row.str(c);
                ++result.rows;
                const Key key{static_cast<int>(table->number(r, "size")), table->number(r, "beta_bar"),
                              table->cell(r, "combiner")};
                auto& g = by_combiner[key];
                g.add("beta", table->number(r, "beta"));
                for (const auto& m : metric_columns) g.add(m, cell_number(*table, r, m));
            }
            if (const auto sp = load_table(s, "sparsity.csv", gaps))
                for (std::size_t r = 0; r < sp->rows.size(); ++r) {
                    auto& g = sparsity_groups[{static_cast<int>(sp->number(r, "size")), sp->number(r, "beta_bar"),
                                               sp->cell(r, "layer")}];
                    g.add("inactive_fraction", sp->number(r, "inactive_fraction"));
                    g.add("mean_activation", sp->number(r, "mean_activation"));
                }
            if (const auto w = load_table(s, "weights.csv", gaps))
                for (std::size_t r = 0; r < w->rows.size(); ++r)
                    weight_groups[{static_cast<int>(w->number(r, "size")), w->number(r, "beta_bar"), w->cell(r, "layer")}]
                        .add("weight_std", w->number(r, "weight_std"));
        } else if (kind == "expand") {
            ++result.sources;
            const auto table = load_table(s, "expansion.csv", gaps);
            if (!table) continue;
            for (const auto& cells : table->rows) {
                auto row = expansion.row();
                row.str(s.name);
                for (const auto& c : cells) row.str(c);
                ++expansion_rows;
            }
        }
    }

    std::vector<std::string> files;
    auto save = [&](const CsvWriter& w, const std::string& name) {
        w.save(out / name);
        files.push_back(name);
    };
    if (!runs_header) {
        gaps.push_back("no sweep runs found under " + run_dir.string());
        runs.header({"source"});
    }
    save(runs, "runs.csv");

    CsvWriter accuracy;
    accuracy.header({"size", "beta", "beta_bar", "combiner", "repeats", "ensemble_accuracy_mean",
                     "ensemble_accuracy_std", "individual_mean", "individual_std"});
    CsvWriter diversity;
    diversity.header({"size", "beta", "beta_bar", "repeats", "dissimilarity", "confidence_mass", "mean_entropy",
                      "vote_spearman", "wall_mass", "mds_final", "mds_trajectory"});
    std::map<int, PlotSeries> acc_plot;
    std::map<int, std::vector<std::pair<double, double>>> arithmetic;  // size -> (beta, mean accuracy)
    std::map<int, std::vector<std::pair<double, double>>> arithmetic_bar;
    for (const auto& [key, g] : by_combiner) {
        const auto& [size, beta_bar, combiner] = key;
        auto row = accuracy.row();
        row.num(size);
        detail::optional_cell(row, g.mean("beta"));
        row.num(beta_bar).str(combiner).num(g.count("ensemble_accuracy"));
        detail::optional_cell(row, g.mean("ensemble_accuracy"));
        detail::optional_cell(row, g.std("ensemble_accuracy"));
        detail::optional_cell(row, g.mean("individual_mean"));
        detail::optional_cell(row, g.std("individual_mean"));
        if (combiner != "arithmetic") continue;
        auto drow = diversity.row();
        drow.num(size);
        detail::optional_cell(drow, g.mean("beta"));
        drow.num(beta_bar).num(g.count("ensemble_accuracy"));
        for (const char* m : {"dissimilarity", "confidence_mass", "mean_entropy", "vote_spearman", "wall_mass",
                              "mds_final", "mds_trajectory"})
            detail::optional_cell(drow, g.mean(m));
        auto& series = acc_plot[size];
        series.name = "N=" + std::to_string(size);
        series.x.push_back(beta_bar);
        series.y.push_back(*g.mean("ensemble_accuracy"));
        arithmetic[size].emplace_back(*g.mean("beta"), *g.mean("ensemble_accuracy"));
        arithmetic_bar[size].emplace_back(beta_bar, *g.mean("ensemble_accuracy"));
    }
    save(accuracy, "accuracy_vs_coupling.csv");
    save(diversity, "diversity_vs_coupling.csv");

    // Peaks, collapse and the beta* fit from the pooled arithmetic means.
    CsvWriter peaks;
    peaks.header({"size", "beta_star", "beta_bar_star", "accuracy"});
    CsvWriter collapse;
    collapse.header({"size", "beta", "beta_over_beta_star", "ensemble_accuracy_mean"});
    std::vector<std::pair<double, double>> points;
    std::vector<PlotSeries> collapse_plot;
    for (const auto& [size, curve] : arithmetic) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < curve.size(); ++i)
            if (curve[i].second > curve[best].second) best = i;
        const double beta_star = curve[best].first;
        peaks.row().num(size).num(beta_star).num(arithmetic_bar[size][best].first).num(curve[best].second);
        points.emplace_back(size, beta_star);
        PlotSeries series{"N=" + std::to_string(size), {}, {}};
        for (const auto& [beta, acc] : curve) {
            auto row = collapse.row();
            row.num(size).num(beta);
            std::optional<double> ratio;
            if (beta_star != 0) ratio = beta / beta_star;
            detail::optional_cell(row, ratio);
            row.num(acc);
            if (ratio) {
                series.x.push_back(*ratio);
                series.y.push_back(acc);
            }
        }
        collapse_plot.push_back(std::move(series));
    }
    save(peaks, "scaling_peaks.csv");
    save(collapse, "scaling_collapse.csv");

    CsvWriter fit_csv;
    fit_csv.header({"slope", "intercept", "residual", "points", "note"});
    std::string note;
    if (points.size() < 3)
        note = "need peaks at three or more sizes, have " + std::to_string(points.size());
    else if (std::any_of(points.begin(), points.end(), [](const auto& p) { return p.second >= 0; }))
        note = "some peak couplings are not negative";
    if (note.empty()) {
        try {
            const auto fit = fit_beta_scaling(points);
            fit_csv.row().num(fit.slope).num(fit.intercept).num(fit.residual).num(points.size()).str("");
        } catch (const std::invalid_argument& e) {
            note = e.what();
        }
    }
    if (!note.empty()) {
        fit_csv.row().str("").str("").str("").num(points.size()).str(note);
        gaps.push_back("scaling fit skipped: " + note);
    }
    save(fit_csv, "scaling_fit.csv");

    CsvWriter sparsity;
    sparsity.header({"size", "beta_bar", "layer", "repeats", "inactive_fraction", "mean_activation"});
    for (const auto& [key, g] : sparsity_groups) {
        auto row = sparsity.row();
        row.num(std::get<0>(key)).num(std::get<1>(key)).str(std::get<2>(key)).num(g.count("inactive_fraction"));
        detail::optional_cell(row, g.mean("inactive_fraction"));
        detail::optional_cell(row, g.mean("mean_activation"));
    }
    save(sparsity, "sparsity_vs_coupling.csv");

    CsvWriter weights;
    weights.header({"size", "beta_bar", "layer", "repeats", "weight_std"});
    for (const auto& [key, g] : weight_groups) {
        auto row = weights.row();
        row.num(std::get<0>(key)).num(std::get<1>(key)).str(std::get<2>(key)).num(g.count("weight_std"));
        detail::optional_cell(row, g.mean("weight_std"));
    }
    save(weights, "weights_vs_coupling.csv");

    if (expansion_rows == 0) gaps.push_back("no expansion runs found");
    save(expansion, "expansion.csv");

    if (svg) {
        std::vector<PlotSeries> series;
        for (auto& [size, s] : acc_plot) series.push_back(s);
        atomic_write(out / "accuracy_vs_coupling.svg",
                     line_plot_svg("Ensemble accuracy vs coupling", "beta_bar", "accuracy", series));
        atomic_write(out / "scaling_collapse.svg",
                     line_plot_svg("Accuracy vs beta / beta*", "beta / beta*", "accuracy", collapse_plot));
        files.push_back("accuracy_vs_coupling.svg");
        files.push_back("scaling_collapse.svg");
    }

    std::string gap_text;
    for (const auto& g : gaps) gap_text += g + "\n";
    atomic_write(out / "gaps.txt", gap_text);
    files.push_back("gaps.txt");

    nlohmann::json sources_json = nlohmann::json::array();
    for (const auto& s : sources)
        sources_json.push_back({{"source", s.name}, {"kind", s.manifest.value("kind", std::string())},
                                {"config_hash", s.manifest.value("config_hash", std::string())}});
    detail::write_manifest(out, "report", {{"run_dir", run_dir.string()}, {"svg", svg}}, files,
                           {{"sources", sources_json}, {"rows", result.rows}, {"gaps", gaps.size()}});
    result.gaps = std::move(gaps);
    return result;
}

}  // namespace colearn
