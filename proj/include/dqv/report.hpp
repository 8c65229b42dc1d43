#pragma once

#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>

#include "dqv/harness.hpp"

namespace dqv {

// ---------------------------------------------------------------------------
// Loading finished runs
// ---------------------------------------------------------------------------

struct SeedLog {
    std::uint64_t seed = 0;
    std::vector<RunRecord> records;
    std::vector<std::pair<std::size_t, double>> avg_max_q; // from trace.csv when present
};

struct LoadedRun {
    fs::path dir;
    std::string env;
    std::string algorithm;
    std::size_t total_steps = 0;
    std::size_t eval_interval = 0;
    std::optional<double> oracle_initial_value;
    std::vector<SeedLog> seeds;
    nlohmann::json summary;
};

namespace detail {

inline nlohmann::json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(p.string() + ": " + e.what());
    }
}

inline std::vector<std::pair<std::size_t, double>> read_trace_csv(const fs::path& p) {
    std::vector<std::pair<std::size_t, double>> out;
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    std::string line;
    std::getline(in, line);
    if (line != "step,avg_max_q,baseline,seed,algorithm,env") throw IoError(p.string() + ": bad header");
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string step, q;
        if (!std::getline(ss, step, ',') || !std::getline(ss, q, ','))
            throw IoError(p.string() + ":" + std::to_string(n) + ": malformed row");
        try {
            out.emplace_back(std::stoull(step), std::stod(q));
        } catch (const std::exception&) {
            throw IoError(p.string() + ":" + std::to_string(n) + ": malformed row");
        }
    }
    return out;
}

} // namespace detail

/// Reads a run directory written by run_experiment. Every unreadable or
/// malformed file is collected and reported in a single IoError.
inline LoadedRun load_run(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("run directory " + dir.string() + " does not exist");
    LoadedRun run;
    run.dir = dir;
    std::vector<std::string> bad;
    nlohmann::json cfg;
    try {
        cfg = detail::read_json_file(dir / "config.json");
        run.env = cfg.at("env_name").get<std::string>();
        run.algorithm = cfg.at("agent").at("algorithm").get<std::string>();
        run.total_steps = cfg.at("total_steps").get<std::size_t>();
        run.eval_interval = cfg.at("eval_interval").get<std::size_t>();
    } catch (const std::exception& e) {
        throw IoError(std::string("unreadable run config: ") + e.what());
    }
    if (fs::exists(dir / "summary.json")) {
        try {
            run.summary = detail::read_json_file(dir / "summary.json");
            if (run.summary.contains("oracle_initial_value") && run.summary["oracle_initial_value"].is_number())
                run.oracle_initial_value = run.summary["oracle_initial_value"].get<double>();
        } catch (const std::exception&) {
            bad.push_back((dir / "summary.json").string());
        }
    }
    for (auto seed : cfg.at("seeds").get<std::vector<std::uint64_t>>()) {
        SeedLog sl;
        sl.seed = seed;
        const auto sd = seed_dir(dir, seed);
        try {
            sl.records = read_run_log(sd / "log.jsonl");
        } catch (const IoError& e) {
            bad.push_back(e.what());
            continue;
        }
        if (fs::exists(sd / "trace.csv")) {
            try {
                sl.avg_max_q = detail::read_trace_csv(sd / "trace.csv");
            } catch (const IoError& e) {
                bad.push_back(e.what());
            }
        }
        run.seeds.push_back(std::move(sl));
    }
    if (!bad.empty()) {
        std::string msg = "missing or corrupt run files:";
        for (const auto& b : bad) msg += "\n  " + b;
        throw IoError(msg);
    }
    return run;
}

// ---------------------------------------------------------------------------
// SVG learning curves
// ---------------------------------------------------------------------------

struct Series {
    std::vector<double> x, y;
};

struct Curve {
    std::string env, metric;
    std::vector<Series> seeds;
    Series median;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick_label(double v) {
    char buf[32];
    if (std::abs(v) >= 1000.0 || (v != 0.0 && std::abs(v) < 0.01))
        std::snprintf(buf, sizeof buf, "%.3g", v);
    else
        std::snprintf(buf, sizeof buf, "%.3f", v);
    std::string s = buf;
    if (s.find('.') != std::string::npos && s.find('e') == std::string::npos) {
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    return s;
}

// Pointwise median over seeds at the x positions shared by all of them.
inline Series median_series(const std::vector<Series>& seeds) {
    Series m;
    if (seeds.empty()) return m;
    std::map<double, std::vector<double>> at;
    for (const auto& s : seeds)
        for (std::size_t i = 0; i < s.x.size(); ++i) at[s.x[i]].push_back(s.y[i]);
    for (const auto& [x, ys] : at) {
        if (ys.size() != seeds.size()) continue;
        m.x.push_back(x);
        m.y.push_back(stats::median(ys));
    }
    return m;
}

// Episode returns land at different steps in each seed; average them in
// equal-width step bins so the seeds share an x grid.
inline Series binned(const std::vector<std::pair<double, double>>& pts, double x_max, std::size_t bins) {
    Series s;
    if (pts.empty()) return s;
    std::vector<double> sum(bins, 0.0);
    std::vector<std::size_t> cnt(bins, 0);
    for (auto [x, y] : pts) {
        auto b = std::min(bins - 1, static_cast<std::size_t>(x / x_max * static_cast<double>(bins)));
        sum[b] += y;
        ++cnt[b];
    }
    std::optional<double> last;
    for (std::size_t b = 0; b < bins; ++b) {
        if (cnt[b] > 0) last = sum[b] / static_cast<double>(cnt[b]);
        if (!last) continue;
        s.x.push_back(x_max * (static_cast<double>(b) + 1.0) / static_cast<double>(bins));
        s.y.push_back(*last);
    }
    return s;
}

} // namespace detail

/// Builds the plotted curves of a run: eval_return (periodic greedy
/// evaluation), episode_return (binned training returns) and avg_max_q.
inline std::vector<Curve> learning_curves(const LoadedRun& run) {
    std::vector<Curve> out;
    Curve ev{run.env, "eval_return"}, ep{run.env, "episode_return"}, mq{run.env, "avg_max_q"};
    double x_max = static_cast<double>(std::max<std::size_t>(run.total_steps, 1));
    for (const auto& s : run.seeds) {
        Series e;
        std::vector<std::pair<double, double>> eps;
        for (const auto& r : s.records) {
            if (r.kind == "step" && r.eval_return) {
                e.x.push_back(static_cast<double>(r.step));
                e.y.push_back(*r.eval_return);
            } else if (r.kind == "episode" && r.episode_return) {
                eps.emplace_back(static_cast<double>(r.step), *r.episode_return);
            }
        }
        if (!e.x.empty()) ev.seeds.push_back(std::move(e));
        auto b = detail::binned(eps, x_max, 50);
        if (!b.x.empty()) ep.seeds.push_back(std::move(b));
        Series q;
        for (auto [st, v] : s.avg_max_q) {
            q.x.push_back(static_cast<double>(st));
            q.y.push_back(v);
        }
        if (!q.x.empty()) mq.seeds.push_back(std::move(q));
    }
    for (Curve* c : {&ev, &ep, &mq}) {
        if (c->seeds.empty()) continue;
        c->median = detail::median_series(c->seeds);
        out.push_back(std::move(*c));
    }
    return out;
}

inline std::string render_svg(const Curve& c) {
    const double W = 640, H = 400, L = 70, R = 20, T = 36, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : c.seeds)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (x1 <= x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if (y1 <= y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    using detail::fmt;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
      << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << fmt(W / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << c.env << ": "
      << c.metric << "</text>\n";
    o << "<line x1=\"" << fmt(L) << "\" y1=\"" << fmt(H - B) << "\" x2=\"" << fmt(W - R) << "\" y2=\"" << fmt(H - B)
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << fmt(L) << "\" y1=\"" << fmt(T) << "\" x2=\"" << fmt(L) << "\" y2=\"" << fmt(H - B)
      << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        o << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << fmt(H - B + 16) << "\" text-anchor=\"middle\">"
          << detail::tick_label(xv) << "</text>\n";
        o << "<text x=\"" << fmt(L - 6) << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\">"
          << detail::tick_label(yv) << "</text>\n";
    }
    o << "<text x=\"" << fmt((L + W - R) / 2) << "\" y=\"" << fmt(H - 12) << "\" text-anchor=\"middle\">step</text>\n";
    o << "<text x=\"16\" y=\"" << fmt((T + H - B) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << fmt((T + H - B) / 2) << ")\">" << (c.metric == "avg_max_q" ? "avg max Q" : "return") << "</text>\n";
    auto draw = [&](const Series& s, const char* attrs) {
        if (s.x.size() == 1) {
            o << "<circle cx=\"" << fmt(px(s.x[0])) << "\" cy=\"" << fmt(py(s.y[0])) << "\" r=\"3\" " << attrs
              << "/>\n";
            return;
        }
        o << "<polyline fill=\"none\" " << attrs << " points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i]));
        o << "\"/>\n";
    };
    for (const auto& s : c.seeds) draw(s, "stroke=\"steelblue\" stroke-opacity=\"0.3\" stroke-width=\"1\"");
    if (!c.median.x.empty()) draw(c.median, "stroke=\"navy\" stroke-width=\"2.5\"");
    o << "</svg>\n";
    return o.str();
}

/// Writes one SVG per (env, metric) into `output` plus curves.csv. Returns the
/// SVG paths written.
inline std::vector<fs::path> emit_learning_curves(const fs::path& run_dir, const fs::path& output) {
    LoadedRun run = load_run(run_dir);
    auto curves = learning_curves(run);
    if (curves.empty()) throw IoError("run " + run_dir.string() + " has no plottable records");
    detail::ensure_writable_dir(output);
    std::vector<fs::path> written;
    std::ofstream csv(output / "curves.csv");
    csv << "env,metric,series,x,y\n";
    auto safe = [](std::string s) {
        for (char& ch : s)
            if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
        return s;
    };
    for (const auto& c : curves) {
        auto p = output / (safe(c.env) + "_" + c.metric + ".svg");
        std::ofstream f(p);
        if (!f) throw IoError("cannot write " + p.string());
        f << render_svg(c);
        written.push_back(p);
        for (std::size_t k = 0; k < c.seeds.size(); ++k)
            for (std::size_t i = 0; i < c.seeds[k].x.size(); ++i)
                csv << c.env << ',' << c.metric << ",seed-" << run.seeds[k].seed << ',' << c.seeds[k].x[i] << ','
                    << nlohmann::json(c.seeds[k].y[i]).dump() << '\n';
        for (std::size_t i = 0; i < c.median.x.size(); ++i)
            csv << c.env << ',' << c.metric << ",median," << c.median.x[i] << ','
                << nlohmann::json(c.median.y[i]).dump() << '\n';
    }
    return written;
}

// ---------------------------------------------------------------------------
// Comparing runs
// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string label;
    std::string algorithm;
    std::vector<double> final_returns;
    double median_final = 0.0;
    double iqr_final = 0.0;
    std::optional<std::size_t> steps_to_threshold;    // on the median eval curve
    std::vector<double> per_seed_steps;                // never reached = total_steps + eval_interval
    int rank_return = 0;                               // 1 = best, 2 = second, 0 = other; ties share
    int rank_steps = 0;
    std::optional<double> p_return; // rank test: best row beats this row on final return
    std::optional<double> p_steps;  // rank test: best row reaches the threshold sooner
};

struct Comparison {
    std::string env;
    std::optional<double> threshold;
    std::vector<ComparisonRow> rows;
};

namespace detail {

// Dense ranking of values; better(a, b) means a ranks ahead of b.
template <class Better>
inline std::vector<int> dense_ranks(const std::vector<double>& v, Better better) {
    std::vector<double> u(v);
    std::sort(u.begin(), u.end(), better);
    u.erase(std::unique(u.begin(), u.end()), u.end());
    std::vector<int> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        r[i] = static_cast<int>(std::find(u.begin(), u.end(), v[i]) - u.begin()) + 1;
    return r;
}

} // namespace detail

inline Comparison compare_runs(const std::vector<fs::path>& dirs) {
    if (dirs.size() < 2) throw InvalidArgument("compare needs at least two run directories");
    std::vector<LoadedRun> runs;
    for (const auto& d : dirs) runs.push_back(load_run(d));
    Comparison cmp;
    cmp.env = runs[0].env;
    for (const auto& r : runs)
        if (r.env != cmp.env)
            throw InvalidArgument("runs are over different environments: '" + cmp.env + "' vs '" + r.env + "'");
    if (runs[0].oracle_initial_value) cmp.threshold = 0.9 * *runs[0].oracle_initial_value;

    for (const auto& r : runs) {
        ComparisonRow row;
        row.algorithm = r.algorithm;
        row.label = r.algorithm + " (" + r.dir.filename().string() + ")";
        for (const auto& s : r.summary.value("seeds", nlohmann::json::array()))
            if (!s.value("diverged", false)) row.final_returns.push_back(s.at("final_return").get<double>());
        if (!row.final_returns.empty()) {
            row.median_final = stats::median(row.final_returns);
            row.iqr_final = stats::iqr(row.final_returns);
        }
        if (cmp.threshold) {
            const double never = static_cast<double>(r.total_steps + r.eval_interval);
            std::vector<Series> evals;
            for (const auto& s : r.seeds) {
                Series e;
                std::optional<double> hit;
                for (const auto& rec : s.records)
                    if (rec.kind == "step" && rec.eval_return) {
                        e.x.push_back(static_cast<double>(rec.step));
                        e.y.push_back(*rec.eval_return);
                        if (!hit && *rec.eval_return >= *cmp.threshold) hit = static_cast<double>(rec.step);
                    }
                row.per_seed_steps.push_back(hit.value_or(never));
                evals.push_back(std::move(e));
            }
            auto med = detail::median_series(evals);
            for (std::size_t i = 0; i < med.x.size(); ++i)
                if (med.y[i] >= *cmp.threshold) {
                    row.steps_to_threshold = static_cast<std::size_t>(med.x[i]);
                    break;
                }
        }
        cmp.rows.push_back(std::move(row));
    }

    std::vector<double> med, steps;
    for (const auto& r : cmp.rows) {
        med.push_back(r.final_returns.empty() ? -std::numeric_limits<double>::infinity() : r.median_final);
        steps.push_back(r.steps_to_threshold ? static_cast<double>(*r.steps_to_threshold)
                                             : std::numeric_limits<double>::infinity());
    }
    auto rr = detail::dense_ranks(med, std::greater<double>());
    auto rs = detail::dense_ranks(steps, std::less<double>());
    std::size_t best_ret = 0, best_steps = 0;
    for (std::size_t i = 0; i < cmp.rows.size(); ++i) {
        cmp.rows[i].rank_return = rr[i] <= 2 ? rr[i] : 0;
        cmp.rows[i].rank_steps = cmp.threshold && rs[i] <= 2 ? rs[i] : 0;
        if (rr[i] == 1 && rr[best_ret] != 1) best_ret = i;
        if (rs[i] == 1 && rs[best_steps] != 1) best_steps = i;
    }
    for (std::size_t i = 0; i < cmp.rows.size(); ++i) {
        auto& row = cmp.rows[i];
        const auto& b = cmp.rows[best_ret];
        if (i != best_ret && !row.final_returns.empty() && !b.final_returns.empty())
            row.p_return = stats::mann_whitney_greater(b.final_returns, row.final_returns).p_value;
        if (cmp.threshold && i != best_steps && !row.per_seed_steps.empty())
            row.p_steps = stats::mann_whitney_greater(row.per_seed_steps, cmp.rows[best_steps].per_seed_steps).p_value;
    }
    return cmp;
}

inline std::string comparison_csv(const Comparison& c) {
    std::ostringstream o;
    auto num = [](const auto& x) { return x ? nlohmann::json(*x).dump() : std::string(""); };
    o << "env,run,algorithm,seeds,median_final_return,iqr_final_return,steps_to_threshold,rank_return,rank_steps,"
         "p_vs_best_return,p_vs_best_steps\n";
    for (const auto& r : c.rows)
        o << c.env << ',' << r.label << ',' << r.algorithm << ',' << r.final_returns.size() << ','
          << nlohmann::json(r.median_final).dump() << ',' << nlohmann::json(r.iqr_final).dump() << ','
          << num(r.steps_to_threshold) << ',' << r.rank_return << ',' << r.rank_steps << ',' << num(r.p_return)
          << ',' << num(r.p_steps) << '\n';
    return o.str();
}

inline std::string comparison_text(const Comparison& c) {
    std::ostringstream o;
    o << "env: " << c.env << '\n';
    if (c.threshold)
        o << "threshold: " << std::setprecision(6) << *c.threshold << " (90% of oracle V*(s0))\n";
    else
        o << "threshold: n/a (no tabular oracle)\n";
    auto mark = [](int r) { return r == 1 ? std::string(" [1st]") : r == 2 ? std::string(" [2nd]") : std::string(); };
    o << std::left << std::setw(34) << "run" << std::setw(22) << "median return" << std::setw(12) << "IQR"
      << std::setw(24) << "steps to threshold" << std::setw(12) << "p(return)" << "p(steps)\n";
    for (const auto& r : c.rows) {
        std::ostringstream m, s, pr, ps, iq;
        m << std::fixed << std::setprecision(4) << r.median_final << mark(r.rank_return);
        iq << std::fixed << std::setprecision(4) << r.iqr_final;
        if (r.steps_to_threshold)
            s << *r.steps_to_threshold << mark(r.rank_steps);
        else
            s << "not reached";
        if (r.p_return) pr << std::setprecision(3) << *r.p_return; else pr << "-";
        if (r.p_steps) ps << std::setprecision(3) << *r.p_steps; else ps << "-";
        o << std::setw(34) << r.label << std::setw(22) << m.str() << std::setw(12) << iq.str() << std::setw(24)
          << s.str() << std::setw(12) << pr.str() << ps.str() << '\n';
    }
    return o.str();
}

} // namespace dqv
