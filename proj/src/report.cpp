#include "esigal/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace esigal {

namespace {

int model_rank(const std::string& m) {
  for (int i = 0; i < 4; ++i)
    if (m == kModelLabels[i]) return i;
  return 4;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

using CellKey = std::tuple<std::string, std::string, int, std::string, int, int>;  // split, domain, rank, model, lag, window

}  // namespace

std::string split_family(const std::string& split) {
  if (split == "intra") return "intra";
  if (split.rfind("inter", 0) == 0) return "inter";
  throw std::invalid_argument("unknown split '" + split + "'");
}

Report aggregate_report(const std::vector<ResultRecord>& records) {
  std::map<std::string, std::set<std::string>> subjects;  // per split family
  std::map<CellKey, std::vector<const ResultRecord*>> cells;
  for (const auto& r : records) {
    r.validate();
    const std::string fam = split_family(r.split);
    subjects[fam].insert(r.subject_id);
    cells[{fam, r.domain, model_rank(r.model), r.model, r.lag_ms, r.window_ms}].push_back(&r);
  }
  Report rep;
  for (const auto& [key, recs] : cells) {
    const auto& [fam, domain, rank, model, lag, window] = key;
    std::map<std::string, int> count;
    for (const auto* r : recs) ++count[r->subject_id];
    std::vector<std::string> missing, dup;
    for (const auto& s : subjects[fam]) {
      if (!count.count(s)) missing.push_back(s);
      else if (count[s] > 1) dup.push_back(s);
    }
    if (!missing.empty() || !dup.empty()) {
      std::string why = fam + " " + domain + " " + model + " lag " + std::to_string(lag) + " window " +
                        std::to_string(window) + ":";
      if (!missing.empty()) {
        why += " missing";
        for (const auto& s : missing) why += " " + s;
      }
      if (!dup.empty()) {
        why += " duplicated";
        for (const auto& s : dup) why += " " + s;
      }
      rep.ragged.push_back(why);
      continue;
    }
    // Sum in subject order so the mean does not depend on record order.
    std::vector<const ResultRecord*> sorted(recs.begin(), recs.end());
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->subject_id < b->subject_id; });
    SummaryRow row{fam, domain, model, lag, window, static_cast<int>(sorted.size()), {}, {}};
    for (int k = 0; k < 3; ++k) {
      double s = 0;
      for (const auto* r : sorted) s += r->pcc(k);
      row.mean[k] = s / static_cast<double>(sorted.size());
    }
    rep.rows.push_back(row);
  }
  std::map<std::tuple<std::string, std::string, int>, double> best;
  for (const auto& r : rep.rows)
    for (int k = 0; k < 3; ++k) {
      auto key = std::make_tuple(r.split, r.domain, k);
      auto it = best.find(key);
      if (it == best.end() || r.mean[k] > it->second) best[key] = r.mean[k];
    }
  for (auto& r : rep.rows)
    for (int k = 0; k < 3; ++k) r.best[k] = r.mean[k] == best[{r.split, r.domain, k}];
  return rep;
}

std::string results_csv(const std::vector<ResultRecord>& records) {
  std::ostringstream os;
  os << "subject,domain,model,lag_ms,window_ms,split,pcc_x,pcc_y,pcc_z,seed,config_hash\n";
  for (const auto& r : records)
    os << r.subject_id << ',' << r.domain << ',' << r.model << ',' << r.lag_ms << ',' << r.window_ms << ','
       << r.split << ',' << fmt("%.10f", r.pcc_x) << ',' << fmt("%.10f", r.pcc_y) << ',' << fmt("%.10f", r.pcc_z)
       << ',' << r.seed << ',' << r.config_hash << '\n';
  return os.str();
}

std::vector<ResultRecord> parse_results_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("subject,domain,model,lag_ms,window_ms,split,pcc_x,pcc_y,pcc_z", 0) != 0)
    throw std::invalid_argument("results CSV header not recognized");
  std::vector<ResultRecord> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 9 && f.size() != 11)
      throw std::invalid_argument("results CSV line " + std::to_string(line_no) + ": expected 9 or 11 fields");
    try {
      ResultRecord r;
      r.subject_id = f[0];
      r.domain = f[1];
      r.model = f[2];
      r.lag_ms = std::stoi(f[3]);
      r.window_ms = std::stoi(f[4]);
      r.split = f[5];
      r.pcc_x = std::stod(f[6]);
      r.pcc_y = std::stod(f[7]);
      r.pcc_z = std::stod(f[8]);
      if (f.size() == 11) {
        r.seed = std::stoull(f[9]);
        r.config_hash = f[10];
      }
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("results CSV line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return out;
}

std::string summary_csv(const Report& report) {
  std::ostringstream os;
  os << "split,domain,model,lag_ms,window_ms,n_subjects,mean_pcc_x,mean_pcc_y,mean_pcc_z,best_x,best_y,best_z\n";
  for (const auto& r : report.rows)
    os << r.split << ',' << r.domain << ',' << r.model << ',' << r.lag_ms << ',' << r.window_ms << ','
       << r.n_subjects << ',' << fmt("%.6f", r.mean[0]) << ',' << fmt("%.6f", r.mean[1]) << ','
       << fmt("%.6f", r.mean[2]) << ',' << r.best[0] << ',' << r.best[1] << ',' << r.best[2] << '\n';
  return os.str();
}

std::vector<TTestRow> run_ttests(const std::vector<ResultRecord>& records, int lag_ms, int window_ms,
                                 std::vector<std::string>* skipped) {
  // (split, model, domain) -> subject -> record
  std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, const ResultRecord*>> by;
  std::set<std::string> splits, domains;
  std::set<std::pair<int, std::string>> models;
  for (const auto& r : records) {
    if (r.lag_ms != lag_ms || r.window_ms != window_ms) continue;
    const auto fam = split_family(r.split);
    by[{fam, r.model, r.domain}][r.subject_id] = &r;
    splits.insert(fam);
    domains.insert(r.domain);
    models.insert({model_rank(r.model), r.model});
  }
  std::vector<TTestRow> rows;
  auto compare = [&](const std::string& fam, const std::string& ma, const std::string& da, const std::string& mb,
                     const std::string& db) {
    const auto ia = by.find({fam, ma, da}), ib = by.find({fam, mb, db});
    if (ia == by.end() || ib == by.end()) return;
    std::vector<std::string> common;
    for (const auto& [s, r] : ia->second)
      if (ib->second.count(s)) common.push_back(s);
    for (int k = 0; k < 3; ++k) {
      const std::string label = fam + " " + ma + "/" + da + " vs " + mb + "/" + db + " axis " + "xyz"[k];
      std::vector<double> a, b;
      for (const auto& s : common) {
        a.push_back(ia->second.at(s)->pcc(k));
        b.push_back(ib->second.at(s)->pcc(k));
      }
      try {
        const auto t = paired_t_test_one_tailed(a, b);
        rows.push_back({fam, lag_ms, window_ms, "xyz"[k], ma + "/" + da, mb + "/" + db, static_cast<int>(a.size()),
                        t.t, t.p});
      } catch (const std::exception& e) {
        if (skipped) skipped->push_back(label + ": " + e.what());
      }
    }
  };
  for (const auto& fam : splits) {
    for (const auto& d : domains)
      for (auto hi = models.rbegin(); hi != models.rend(); ++hi)
        for (auto lo = std::next(hi); lo != models.rend(); ++lo) compare(fam, hi->second, d, lo->second, d);
    if (domains.count("sensor") && domains.count("source"))
      for (const auto& m : models) compare(fam, m.second, "sensor", m.second, "source");
  }
  return rows;
}

std::string ttests_csv(const std::vector<TTestRow>& rows) {
  std::ostringstream os;
  os << "split,lag_ms,window_ms,axis,a,b,n,t,p\n";
  for (const auto& r : rows)
    os << r.split << ',' << r.lag_ms << ',' << r.window_ms << ',' << r.axis << ',' << r.a << ',' << r.b << ','
       << r.n << ',' << fmt("%.6f", r.t) << ',' << fmt("%.3e", r.p) << '\n';
  return os.str();
}

std::string render_markdown(const Report& report, const std::vector<TTestRow>& ttests) {
  std::ostringstream os;
  std::set<std::string> splits;
  for (const auto& r : report.rows) splits.insert(r.split);
  for (const auto& fam : splits) {
    std::set<std::string> domain_set;
    std::set<int> windows;
    std::set<std::pair<int, std::string>> models;
    std::set<int> lags;
    std::map<std::tuple<std::string, std::string, int, int>, const SummaryRow*> cell;
    for (const auto& r : report.rows) {
      if (r.split != fam) continue;
      domain_set.insert(r.domain);
      windows.insert(r.window_ms);
      models.insert({model_rank(r.model), r.model});
      lags.insert(r.lag_ms);
      cell[{r.domain, r.model, r.lag_ms, r.window_ms}] = &r;
    }
    std::vector<std::string> domains;
    for (const char* d : {"sensor", "source"})
      if (domain_set.count(d)) domains.push_back(d);
    os << "## Mean PCC, " << (fam == "intra" ? "intra-subject" : "inter-subject") << "\n\n";
    os << "| Direction | Model | Lag (ms) |";
    for (const auto& d : domains)
      for (int w : windows) os << ' ' << d << ' ' << w << " |";
    os << "\n|---|---|---|";
    for (std::size_t i = 0; i < domains.size() * windows.size(); ++i) os << "---|";
    os << '\n';
    for (int k = 0; k < 3; ++k)
      for (const auto& [rank, model] : models)
        for (int lag : lags) {
          os << "| " << "xyz"[k] << " | " << model << " | " << lag << " |";
          for (const auto& d : domains)
            for (int w : windows) {
              auto it = cell.find({d, model, lag, w});
              if (it == cell.end()) {
                os << " - |";
                continue;
              }
              const auto v = fmt("%.3f", it->second->mean[k]);
              os << ' ' << (it->second->best[k] ? "**" + v + "**" : v) << " |";
            }
          os << '\n';
        }
    os << '\n';
  }
  if (!report.ragged.empty()) {
    os << "## Cells excluded (ragged grid)\n\n";
    for (const auto& r : report.ragged) os << "- " << r << '\n';
    os << '\n';
  }
  if (!ttests.empty()) {
    os << "## One-tailed paired t-tests\n\n| Split | Lag | Window | Axis | A | B | n | t | p |\n|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& t : ttests)
      os << "| " << t.split << " | " << t.lag_ms << " | " << t.window_ms << " | " << t.axis << " | " << t.a << " | "
         << t.b << " | " << t.n << " | " << fmt("%.3f", t.t) << " | " << fmt("%.3e", t.p) << " |\n";
    os << '\n';
  }
  return os.str();
}

}  // namespace esigal
