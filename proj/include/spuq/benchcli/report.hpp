#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "spuq/benchcli/evaluate.hpp"

namespace spuq::bench {

using nlohmann::json;

// ------------------------------------------------------------------ CSV (RFC 4180)

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Fixed six-decimal rendering; NaN becomes an empty field.
inline std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw std::runtime_error(path.string() + ": cannot open for writing");
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << csv_field(fields[i]);
    out_ << "\r\n";
  }
  ~CsvWriter() { out_.flush(); }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

// Rows of a CSV file including the header row.
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw std::runtime_error(path.string() + ": unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double parse_num(const std::string& s) { return s.empty() ? kNaN : std::stod(s); }

inline json json_num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

// ------------------------------------------------------------------ cells

struct RetentionSet {
  metrics::RetentionCurve model, oracle, random;
};

struct CellResult {
  prop::PropagatorKind propagator = prop::PropagatorKind::Affinity;
  uq::UqKind strategy = uq::UqKind::None;
  bool ok = false;
  std::string error;
  std::vector<VolumeResult> volumes;
  metrics::Correlation r;  // uncertainty vs 100 - DSC over volumes
  std::optional<RetentionSet> retention;

  std::string name() const { return prop::to_string(propagator) + "_" + uq::to_string(strategy); }
  bool has_uq() const { return strategy != uq::UqKind::None; }
};

// Random ordering is averaged over this many permutations.
inline constexpr std::size_t kRandomRetentionDraws = 100;

inline void compute_cell_statistics(CellResult& c, std::uint64_t seed) {
  std::vector<double> err, unc;
  for (const auto& v : c.volumes) {
    err.push_back(100.0 - v.dsc);
    unc.push_back(v.uncertainty);
  }
  if (c.has_uq()) c.r = metrics::pearson_r(unc, err);
  if (err.size() < 2) return;
  RetentionSet rs;
  rs.oracle = metrics::retention_curve(err, err);
  if (c.has_uq()) rs.model = metrics::retention_curve(err, unc);
  auto rng = grad::Rng::stream(seed, "retention_random", static_cast<std::uint64_t>(c.strategy));
  for (std::size_t k = 0; k < kRandomRetentionDraws; ++k) {
    std::vector<double> u(err.size());
    for (auto& x : u) x = rng.uniform(0.0, 1.0);
    const auto curve = metrics::retention_curve(err, u);
    if (k == 0) {
      rs.random = curve;
    } else {
      for (std::size_t i = 0; i < curve.errors.size(); ++i) rs.random.errors[i] += curve.errors[i];
      rs.random.r_auc += curve.r_auc;
    }
  }
  for (auto& e : rs.random.errors) e /= static_cast<double>(kRandomRetentionDraws);
  rs.random.r_auc /= static_cast<double>(kRandomRetentionDraws);
  c.retention = rs;
}

// ------------------------------------------------------------------ writers

inline void write_results_csv(const std::filesystem::path& path, const std::vector<CellResult>& cells) {
  CsvWriter w(path);
  w.row({"propagator", "strategy", "phantom", "kind", "annotated_slice", "dsc", "surface_dice", "ahd", "uncertainty",
         "over_extension_voxels", "split_dsc_before", "split_dsc_at"});
  for (const auto& c : cells)
    for (const auto& v : c.volumes) {
      w.row({prop::to_string(c.propagator), uq::to_string(c.strategy), v.id, phantom::to_string(v.kind),
             std::to_string(v.annotated_slice), num(v.dsc), num(v.surface_dice), num(v.ahd), num(v.uncertainty),
             v.cap ? std::to_string(v.cap->over_extension_voxels) : "",
             v.branch ? num(v.branch->dsc_before_split) : "", v.branch ? num(v.branch->dsc_at_split) : ""});
    }
}

inline void write_per_slice_csv(const std::filesystem::path& path, const std::vector<CellResult>& cells) {
  CsvWriter w(path);
  w.row({"propagator", "strategy", "phantom", "kind", "slice", "distance", "spacing_z", "gt_area", "pred_area", "dsc",
         "surface_dice", "uncertainty"});
  for (const auto& c : cells)
    for (const auto& v : c.volumes)
      for (const auto& s : v.slices) {
        w.row({prop::to_string(c.propagator), uq::to_string(c.strategy), v.id, phantom::to_string(v.kind),
               std::to_string(s.slice), std::to_string(s.distance), num(v.spacing_z), std::to_string(s.gt_area),
               std::to_string(s.pred_area), num(s.dsc), num(s.surface_dice), num(s.uncertainty)});
      }
}

inline void write_retention_csv(const std::filesystem::path& path, const std::vector<CellResult>& cells) {
  CsvWriter w(path);
  w.row({"propagator", "strategy", "ordering", "fraction", "error", "r_auc"});
  for (const auto& c : cells) {
    if (!c.retention) continue;
    auto emit = [&](const char* name, const metrics::RetentionCurve& rc) {
      for (std::size_t i = 0; i < rc.fractions.size(); ++i) {
        w.row({prop::to_string(c.propagator), uq::to_string(c.strategy), name, num(rc.fractions[i]),
               num(rc.errors[i]), num(rc.r_auc)});
      }
    };
    if (c.has_uq()) emit("uncertainty", c.retention->model);
    emit("oracle", c.retention->oracle);
    emit("random", c.retention->random);
  }
}

struct TableRow {
  std::string propagator, strategy;
  bool ok = false;
  std::string error;
  metrics::MeanStd dsc, surface_dice, ahd;
  std::size_t ahd_undefined = 0;
  double r = kNaN, r_auc = kNaN;
};

inline TableRow table_row(const CellResult& c) {
  TableRow t{prop::to_string(c.propagator), uq::to_string(c.strategy), c.ok, c.error, {}, {}, {}, 0, kNaN, kNaN};
  if (!c.ok) return t;
  std::vector<double> d, s, a;
  for (const auto& v : c.volumes) {
    d.push_back(v.dsc);
    s.push_back(v.surface_dice);
    if (std::isnan(v.ahd))
      ++t.ahd_undefined;
    else
      a.push_back(v.ahd);
  }
  t.dsc = metrics::mean_std(d);
  t.surface_dice = metrics::mean_std(s);
  t.ahd = metrics::mean_std(a);
  if (c.has_uq()) {
    t.r = c.r.value;
    if (c.retention) t.r_auc = c.retention->model.r_auc;
  }
  return t;
}

inline json table1_json(const std::vector<CellResult>& cells) {
  json rows = json::array();
  for (const auto& c : cells) {
    const auto t = table_row(c);
    auto ms = [](const metrics::MeanStd& m) {
      return json{{"mean", m.n ? json(m.mean) : json(nullptr)}, {"std", m.n ? json(m.std) : json(nullptr)}, {"n", m.n}};
    };
    json row{{"propagator", t.propagator}, {"strategy", t.strategy}, {"status", t.ok ? "ok" : "failed"}};
    if (!t.ok) {
      row["error"] = t.error;
    } else {
      row["DSC"] = ms(t.dsc);
      row["SurfaceDice"] = ms(t.surface_dice);
      row["AHD"] = ms(t.ahd);
      row["AHD"]["undefined"] = t.ahd_undefined;
      row["r"] = json_num(t.r);
      row["R-AUC"] = json_num(t.r_auc);
    }
    rows.push_back(row);
  }
  return {{"columns", {"DSC", "SurfaceDice", "AHD", "r", "R-AUC"}},
          {"note", "r and R-AUC are null for strategy none"},
          {"rows", rows}};
}

inline const char* kPhantomBanner =
    "> **Synthetic phantom data.** These numbers come from procedurally generated phantoms, not from the clinical "
    "CT datasets used in published evaluations of these methods, and are not comparable to them.";

inline std::string table1_markdown(const std::vector<CellResult>& cells) {
  auto pm = [](const metrics::MeanStd& m, int prec) {
    if (!m.n) return std::string("-");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", prec, m.mean, prec, m.std);
    return std::string(buf);
  };
  auto single = [](double v) {
    if (std::isnan(v)) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return std::string(buf);
  };
  std::ostringstream md;
  md << kPhantomBanner << "\n\n";
  md << "| Propagator | UQ strategy | DSC | SurfaceDice | AHD | r | R-AUC |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (const auto& c : cells) {
    const auto t = table_row(c);
    const std::string label = c.strategy == uq::UqKind::None ? "none (base)" : t.strategy;
    if (!t.ok) {
      md << "| " << t.propagator << " | " << label << " | failed | failed | failed | - | - |\n";
      continue;
    }
    md << "| " << t.propagator << " | " << label << " | " << pm(t.dsc, 2) << " | " << pm(t.surface_dice, 2) << " | "
       << pm(t.ahd, 3) << " | " << single(t.r) << " | " << single(t.r_auc) << " |\n";
  }
  return md.str();
}

inline json failure_report_json(const std::vector<CellResult>& cells) {
  json capped = json::array(), branching = json::array(), summary = json::array(), failed = json::array();
  for (const auto& c : cells) {
    if (!c.ok) {
      failed.push_back({{"cell", c.name()}, {"error", c.error}});
      continue;
    }
    std::size_t n_cap = 0, n_over = 0, n_branch = 0, n_drop = 0;
    for (const auto& v : c.volumes) {
      if (v.cap) {
        ++n_cap;
        n_over += v.cap->over_extension_voxels > 0;
        capped.push_back({{"propagator", prop::to_string(c.propagator)},
                          {"strategy", uq::to_string(c.strategy)},
                          {"phantom", v.id},
                          {"cap_depth", v.cap->cap_depth},
                          {"over_extension_voxels", v.cap->over_extension_voxels},
                          {"beyond_cap_uncertainty", json_num(v.cap->beyond_cap_uncertainty)},
                          {"trunk_uncertainty", json_num(v.cap->trunk_uncertainty)}});
      }
      if (v.branch) {
        ++n_branch;
        n_drop += v.branch->dsc_at_split < v.branch->dsc_before_split;
        branching.push_back({{"propagator", prop::to_string(c.propagator)},
                             {"strategy", uq::to_string(c.strategy)},
                             {"phantom", v.id},
                             {"split_depth", v.branch->split_depth},
                             {"component_dsc",
                              {{"trunk", json_num(v.branch->trunk_dsc)},
                               {"branch_a", json_num(v.branch->branch_a_dsc)},
                               {"branch_b", json_num(v.branch->branch_b_dsc)}}},
                             {"dsc_before_split", json_num(v.branch->dsc_before_split)},
                             {"dsc_at_split", json_num(v.branch->dsc_at_split)}});
      }
    }
    summary.push_back({{"propagator", prop::to_string(c.propagator)},
                       {"strategy", uq::to_string(c.strategy)},
                       {"capped_cases", n_cap},
                       {"over_extended_cases", n_over},
                       {"branching_cases", n_branch},
                       {"split_drop_cases", n_drop}});
  }
  return {{"capped_cylinder", capped}, {"branching_y", branching}, {"summary", summary}, {"failed_cells", failed}};
}

// ------------------------------------------------------------------ trends

struct TrendKey {
  std::string propagator, strategy;
  bool operator<(const TrendKey& o) const { return std::tie(propagator, strategy) < std::tie(o.propagator, o.strategy); }
};

inline std::map<TrendKey, std::vector<metrics::VolumeSlices>> slices_from_cells(const std::vector<CellResult>& cells) {
  std::map<TrendKey, std::vector<metrics::VolumeSlices>> out;
  for (const auto& c : cells) {
    if (!c.ok) continue;
    auto& list = out[{prop::to_string(c.propagator), uq::to_string(c.strategy)}];
    for (const auto& v : c.volumes) list.push_back({v.slices, v.spacing_z});
  }
  return out;
}

inline std::map<TrendKey, std::vector<metrics::VolumeSlices>> slices_from_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw std::runtime_error(path.string() + ": empty file");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
  for (const char* need : {"propagator", "strategy", "phantom", "slice", "distance", "spacing_z", "gt_area",
                           "pred_area", "dsc", "surface_dice", "uncertainty"}) {
    if (!col.count(need)) throw std::runtime_error(path.string() + ": missing column '" + need + "'");
  }
  std::map<TrendKey, std::map<std::string, metrics::VolumeSlices>> grouped;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != rows[0].size()) throw std::runtime_error(path.string() + ": ragged row " + std::to_string(r + 1));
    metrics::SliceRecord s;
    s.slice = std::stoul(row[col["slice"]]);
    s.distance = std::stoul(row[col["distance"]]);
    s.gt_area = std::stoul(row[col["gt_area"]]);
    s.pred_area = std::stoul(row[col["pred_area"]]);
    s.dsc = parse_num(row[col["dsc"]]);
    s.surface_dice = parse_num(row[col["surface_dice"]]);
    s.uncertainty = parse_num(row[col["uncertainty"]]);
    auto& v = grouped[{row[col["propagator"]], row[col["strategy"]]}][row[col["phantom"]]];
    v.spacing_z = parse_num(row[col["spacing_z"]]);
    v.slices.push_back(s);
  }
  std::map<TrendKey, std::vector<metrics::VolumeSlices>> out;
  for (auto& [k, vols] : grouped)
    for (auto& [_, v] : vols) out[k].push_back(std::move(v));
  return out;
}

inline std::vector<std::string> trend_columns() {
  std::vector<std::string> cols{"distance_bucket"};
  for (const char* m : {"dsc", "surface_dice", "uncertainty"})
    for (const char* s : {"_mean", "_std", "_n"}) cols.push_back(std::string(m) + s);
  return cols;
}

inline std::vector<std::string> trend_row(const metrics::TrendBucket& b) {
  std::vector<std::string> row{num(b.distance)};
  for (const auto* m : {&b.dsc, &b.surface_dice, &b.uncertainty}) {
    row.push_back(m->n ? num(m->mean) : "");
    row.push_back(m->n ? num(m->std) : "");
    row.push_back(std::to_string(m->n));
  }
  return row;
}

inline json correlation_json(const metrics::Correlation& c) {
  return {{"rho", json_num(c.value)}, {"status", metrics::to_string(c.status)}};
}

// Monotone-trend flags from rank correlation over bucket means.
inline json trend_flags_json(const metrics::TrendFlags& f) {
  auto ok = [](const metrics::Correlation& c) { return c.status == metrics::CorrelationStatus::Ok; };
  return {{"dsc", correlation_json(f.dsc_rho)},
          {"surface_dice", correlation_json(f.surface_dice_rho)},
          {"uncertainty", correlation_json(f.uncertainty_rho)},
          {"dsc_nonincreasing", ok(f.dsc_rho) && f.dsc_rho.value <= 0.0},
          {"surface_dice_nonincreasing", ok(f.surface_dice_rho) && f.surface_dice_rho.value <= 0.0},
          {"uncertainty_nondecreasing", ok(f.uncertainty_rho) && f.uncertainty_rho.value >= 0.0}};
}

// Writes trend.csv (all series) into `dir`; with `per_series` also one CSV per
// (propagator, strategy) and trend_flags.json.
inline std::map<TrendKey, metrics::TrendSeries> write_trends(
    const std::filesystem::path& dir, const std::map<TrendKey, std::vector<metrics::VolumeSlices>>& slices,
    bool per_series) {
  std::map<TrendKey, metrics::TrendSeries> series;
  for (const auto& [k, vols] : slices)
    if (!vols.empty()) series[k] = metrics::trend_analysis(vols);
  {
    CsvWriter all(dir / "trend.csv");
    auto header = trend_columns();
    header.insert(header.begin(), {"propagator", "strategy"});
    all.row(header);
    for (const auto& [k, t] : series)
      for (const auto& b : t.buckets) {
        auto row = trend_row(b);
        row.insert(row.begin(), {k.propagator, k.strategy});
        all.row(row);
      }
  }
  if (per_series) {
    json flags = json::object();
    for (const auto& [k, t] : series) {
      CsvWriter w(dir / ("trend_" + k.propagator + "_" + k.strategy + ".csv"));
      w.row(trend_columns());
      for (const auto& b : t.buckets) w.row(trend_row(b));
      flags[k.propagator + "_" + k.strategy] = trend_flags_json(metrics::trend_flags(t));
    }
    std::ofstream(dir / "trend_flags.json") << flags.dump(2) << '\n';
  }
  return series;
}

}  // namespace spuq::bench
