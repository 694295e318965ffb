#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpd/bench/metrics.hpp"
#include "cpd/binary_io.hpp"

namespace cpd::bench {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV (RFC 4180 fields, '#' metadata lines before the header)

inline std::string csv_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& config_hash) { os_ << "# config_hash=" << config_hash << "\r\n"; }

    CsvWriter& comment(const std::string& text) {
        os_ << "# " << text << "\r\n";
        return *this;
    }

    CsvWriter& row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) os_ << (i ? "," : "") << csv_field(fields[i]);
        os_ << "\r\n";
        return *this;
    }

    std::string str() const { return os_.str(); }

private:
    std::ostringstream os_;
};

struct CsvTable {
    std::vector<std::string> comments;  // without the leading "# "
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::out_of_range("csv: no column '" + name + "'");
    }

    std::string meta(const std::string& key) const {
        for (const auto& c : comments)
            if (c.rfind(key + "=", 0) == 0) return c.substr(key.size() + 1);
        return {};
    }
};

inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::vector<std::vector<std::string>> records;
    std::size_t i = 0;
    const auto n = text.size();
    while (i < n) {
        if (records.empty() && t.header.empty() && text[i] == '#') {
            auto e = text.find('\n', i);
            if (e == std::string::npos) e = n;
            auto line = text.substr(i, e - i);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            line = line.substr(1);
            if (!line.empty() && line.front() == ' ') line.erase(0, 1);
            t.comments.push_back(line);
            i = e + 1;
            continue;
        }
        std::vector<std::string> rec;
        std::string field;
        bool quoted = false;
        for (;;) {
            if (i >= n) {
                if (quoted) throw std::runtime_error("csv: unterminated quoted field");
                rec.push_back(field);
                break;
            }
            const char c = text[i];
            if (quoted) {
                if (c == '"') {
                    if (i + 1 < n && text[i + 1] == '"') {
                        field += '"';
                        i += 2;
                    } else {
                        quoted = false;
                        ++i;
                    }
                } else {
                    field += c;
                    ++i;
                }
            } else if (c == '"' && field.empty()) {
                quoted = true;
                ++i;
            } else if (c == ',') {
                rec.push_back(field);
                field.clear();
                ++i;
            } else if (c == '\r' || c == '\n') {
                rec.push_back(field);
                i += (c == '\r' && i + 1 < n && text[i + 1] == '\n') ? 2 : 1;
                break;
            } else {
                field += c;
                ++i;
            }
        }
        if (t.header.empty())
            t.header = std::move(rec);
        else
            records.push_back(std::move(rec));
    }
    for (const auto& r : records)
        if (r.size() != t.header.size()) throw std::runtime_error("csv: row width differs from header");
    t.rows = std::move(records);
    return t;
}

inline double parse_number(const std::string& s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::runtime_error("csv: bad number '" + s + "'");
    return v;
}

// ---------------------------------------------------------------------------
// Table files

inline std::string task_name(std::uint32_t t) { return "task" + std::to_string(t); }

inline std::string score_matrix_csv(const ScoreMatrix& m, const std::string& hash) {
    CsvWriter w(hash);
    w.comment("strategy=" + replay::to_string(m.key.strategy))
        .comment("buffer_size=" + capacity_label(m.key.capacity))
        .comment("loss=" + distill::to_string(m.key.loss))
        .comment("seed=" + std::to_string(m.seed))
        .comment("units=mean z-rotation, degrees");
    std::vector<std::string> head{"experience", "trained_task"};
    for (std::size_t t = 0; t < m.task_order.size(); ++t) head.push_back(task_name(static_cast<std::uint32_t>(t)));
    head.push_back("avg_seen");
    w.row(head);
    const auto seen = avg_seen_tasks(m);
    for (std::size_t r = 0; r < m.rows.size(); ++r) {
        std::vector<std::string> f{std::to_string(r + 1), task_name(m.task_order[r])};
        for (double v : m.rows[r]) f.push_back(csv_number(v));
        f.push_back(csv_number(seen[r]));
        w.row(f);
    }
    return w.str();
}

inline ScoreMatrix parse_score_matrix_csv(const std::string& text) {
    const auto t = parse_csv(text);
    ScoreMatrix m;
    m.key.strategy = replay::strategy_from_string(t.meta("strategy"));
    const auto cap = t.meta("buffer_size");
    m.key.capacity = cap == "all" ? 0 : std::stoull(cap);
    m.key.loss = distill::loss_from_string(t.meta("loss"));
    m.seed = std::stoull(t.meta("seed"));
    const std::size_t k = t.header.size() - 3;
    for (const auto& row : t.rows) {
        m.task_order.push_back(static_cast<std::uint32_t>(std::stoul(row[1].substr(4))));
        std::vector<double> v;
        for (std::size_t j = 0; j < k; ++j) v.push_back(parse_number(row[2 + j]));
        m.rows.push_back(std::move(v));
    }
    return m;
}

/// Table III layout: one block per buffer size, rows = experiences then "Avg",
/// columns = strategies (mean and std of avg-seen-tasks over seeds).
inline std::string aggregate_csv(const AggregateReport& rep) {
    CsvWriter w(rep.config_hash);
    w.comment("std=population over " + std::to_string(rep.seeds.size()) + " seeds (denominator n)")
        .comment("loss=" + distill::to_string(rep.main_loss));
    std::vector<std::string> head{"buffer_size", "experience"};
    for (auto s : rep.strategies) {
        head.push_back(replay::to_string(s) + "_mean");
        head.push_back(replay::to_string(s) + "_std");
    }
    w.row(head);
    for (auto m : rep.buffer_sizes) {
        for (std::size_t e = 0; e <= rep.task_order.size(); ++e) {
            const bool avg_row = e == rep.task_order.size();
            std::vector<std::string> f{std::to_string(m), avg_row ? "Avg" : task_name(rep.task_order[e])};
            for (auto s : rep.strategies) {
                const auto* c = rep.find(make_cell_key(s, m, rep.main_loss));
                if (!c) throw std::logic_error("aggregate_csv: missing cell " + replay::to_string(s));
                const auto ms = avg_row ? c->overall : c->avg_seen.at(e);
                f.push_back(csv_number(ms.mean));
                f.push_back(csv_number(ms.std));
            }
            w.row(f);
        }
    }
    return w.str();
}

inline std::vector<std::string> matrix_header(std::size_t k) {
    std::vector<std::string> head{"strategy", "buffer_size", "loss", "row"};
    for (std::size_t t = 0; t < k; ++t) {
        head.push_back(task_name(static_cast<std::uint32_t>(t)) + "_mean");
        head.push_back(task_name(static_cast<std::uint32_t>(t)) + "_std");
    }
    head.push_back("avg_seen_mean");
    head.push_back("avg_seen_std");
    return head;
}

/// Mean score matrices (Table II shape) with a trailing forgetting row per cell.
inline std::string matrices_csv(const AggregateReport& rep) {
    CsvWriter w(rep.config_hash);
    w.comment("std=population over " + std::to_string(rep.seeds.size()) + " seeds (denominator n)")
        .comment("forgetting=max over rows minus final row, per task");
    const auto k = rep.task_order.size();
    w.row(matrix_header(k));
    for (const auto* list : {&rep.cells, &rep.loss_cells})
        for (const auto& c : *list) {
            const std::vector<std::string> id{replay::to_string(c.key.strategy), capacity_label(c.key.capacity),
                                              distill::to_string(c.key.loss)};
            for (std::size_t r = 0; r < c.matrix.size(); ++r) {
                auto f = id;
                f.push_back(task_name(rep.task_order[r]));
                for (const auto& ms : c.matrix[r]) {
                    f.push_back(csv_number(ms.mean));
                    f.push_back(csv_number(ms.std));
                }
                f.push_back(csv_number(c.avg_seen[r].mean));
                f.push_back(csv_number(c.avg_seen[r].std));
                w.row(f);
            }
            if (!c.forgetting_per_task.empty()) {
                auto f = id;
                f.push_back("forgetting");
                for (const auto& ms : c.forgetting_per_task) {
                    f.push_back(csv_number(ms.mean));
                    f.push_back(csv_number(ms.std));
                }
                f.push_back(csv_number(c.forgetting_mean.mean));
                f.push_back(csv_number(c.forgetting_mean.std));
                w.row(f);
            }
        }
    return w.str();
}

/// Table I layout: final-row score per task for Cumulative training under each loss.
inline std::string loss_comparison_csv(const AggregateReport& rep) {
    CsvWriter w(rep.config_hash);
    w.comment("strategy=Cumulative").comment("std=population over " + std::to_string(rep.seeds.size()) + " seeds");
    std::vector<std::string> head{"loss"};
    for (std::size_t t = 0; t < rep.task_order.size(); ++t) {
        head.push_back(task_name(static_cast<std::uint32_t>(t)) + "_mean");
        head.push_back(task_name(static_cast<std::uint32_t>(t)) + "_std");
    }
    head.insert(head.end(), {"final_avg_mean", "final_avg_std"});
    w.row(head);
    for (const auto& c : rep.loss_cells) {
        std::vector<std::string> f{distill::to_string(c.key.loss)};
        for (const auto& ms : c.matrix.back()) {
            f.push_back(csv_number(ms.mean));
            f.push_back(csv_number(ms.std));
        }
        f.push_back(csv_number(c.final_avg().mean));
        f.push_back(csv_number(c.final_avg().std));
        w.row(f);
    }
    return w.str();
}

inline std::string experts_csv(const AggregateReport& rep) {
    CsvWriter w(rep.config_hash);
    w.comment("scores=mean z-rotation of the deterministic policy, degrees");
    w.row({"seed", "task", "runs", "initial_score", "best_score", "diverged", "episodes"});
    for (const auto& e : rep.experts)
        w.row({std::to_string(e.seed), task_name(e.task), std::to_string(e.runs), csv_number(e.initial_score),
               csv_number(e.best_score), e.diverged ? "1" : "0", std::to_string(e.training_rewards.size())});
    return w.str();
}

// ---------------------------------------------------------------------------
// SVG line plots

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

inline std::string svg_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

inline std::string svg_line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<Series>& series, const std::string& hash) {
    constexpr double W = 720, H = 440, L = 70, R = 170, T = 40, B = 55;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };
    auto tick = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.4g", v);
        return std::string(b);
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- config_hash=" << hash << " -->\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << num(W / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(title)
      << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
        o << "<text x=\"" << num(px(xv)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << tick(xv)
          << "</text>\n";
        o << "<text x=\"" << L - 6 << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
          << "</text>\n";
        o << "<line x1=\"" << L << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << W - R << "\" y2=\"" << num(py(yv))
          << "\" stroke=\"#dddddd\"/>\n";
    }
    o << "<text x=\"" << num((L + W - R) / 2) << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << svg_escape(xlabel) << "</text>\n";
    o << "<text transform=\"translate(16," << num((T + H - B) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << svg_escape(ylabel) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* col = palette[s % 10];
        o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.6\" points=\"";
        for (std::size_t i = 0; i < series[s].x.size(); ++i)
            o << (i ? " " : "") << num(px(series[s].x[i])) << "," << num(py(series[s].y[i]));
        o << "\"/>\n";
        const double ly = T + 14 + 18.0 * static_cast<double>(s);
        o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << num(ly) << "\" x2=\"" << W - R + 32 << "\" y2=\""
          << num(ly) << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n"
          << "<text x=\"" << W - R + 38 << "\" y=\"" << num(ly + 4) << "\">" << svg_escape(series[s].name)
          << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

// ---------------------------------------------------------------------------

inline std::string run_file_name(const ScoreMatrix& m) {
    return "score_" + cell_label(m.key) + "_seed" + std::to_string(m.seed) + ".csv";
}

inline void ensure_writable_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
    const auto probe = dir / ".write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw std::runtime_error("output directory is not writable: " + dir.string());
    }
    fs::remove(probe, ec);
}

/// Writes every report file under `outdir` and returns their paths.
inline std::vector<fs::path> emit_report(const AggregateReport& rep, const fs::path& outdir) {
    if (rep.cells.empty()) throw std::invalid_argument("emit_report: report holds no strategy results");
    if (rep.strategies.empty() || rep.buffer_sizes.empty() || rep.seeds.empty())
        throw std::invalid_argument("emit_report: incomplete report");
    ensure_writable_dir(outdir);
    ensure_writable_dir(outdir / "runs");
    std::vector<fs::path> written;
    auto put = [&](const fs::path& p, const std::string& text) {
        io::write_text(p, text);
        written.push_back(p);
    };
    for (const auto* list : {&rep.cells, &rep.loss_cells})
        for (const auto& c : *list)
            for (const auto& m : c.runs) put(outdir / "runs" / run_file_name(m), score_matrix_csv(m, rep.config_hash));
    put(outdir / "aggregate.csv", aggregate_csv(rep));
    put(outdir / "matrices.csv", matrices_csv(rep));
    if (!rep.loss_cells.empty()) put(outdir / "loss_comparison.csv", loss_comparison_csv(rep));
    if (!rep.experts.empty()) {
        put(outdir / "experts.csv", experts_csv(rep));
        std::vector<Series> curves;
        for (const auto& e : rep.experts) {
            if (e.seed != rep.seeds.front() || e.training_rewards.empty()) continue;
            Series s{task_name(e.task), {}, moving_average(e.training_rewards)};
            for (std::size_t i = 0; i < s.y.size(); ++i) s.x.push_back(static_cast<double>(i + 1));
            curves.push_back(std::move(s));
        }
        put(outdir / "training_curves.svg",
            svg_line_plot("Expert training, seed " + std::to_string(rep.seeds.front()) + " (moving average 20)",
                          "episode", "episodic reward", curves, rep.config_hash));
    }
    for (auto m : rep.buffer_sizes) {
        std::vector<Series> lines;
        for (auto s : rep.strategies) {
            const auto* c = rep.find(make_cell_key(s, m, rep.main_loss));
            Series ser{replay::to_string(s), {}, {}};
            for (std::size_t e = 0; e < c->avg_seen.size(); ++e) {
                ser.x.push_back(static_cast<double>(e + 1));
                ser.y.push_back(c->avg_seen[e].mean);
            }
            lines.push_back(std::move(ser));
        }
        put(outdir / ("scores_M" + std::to_string(m) + ".svg"),
            svg_line_plot("Average seen-task score, M = " + std::to_string(m), "experience",
                          "mean z-rotation (deg)", lines, rep.config_hash));
    }
    return written;
}

}  // namespace cpd::bench
