#include "metrics_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dynbc_gate.hpp"
#include "error.hpp"

namespace dynfed {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::vector<std::string> csv_lines(const std::string& text, const char* header) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ContractError("csv: empty document");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw ContractError("csv: unexpected header '" + line + "'");
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw ContractError("csv: bad number '" + s + "'");
  return v;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

double dice(std::span<const double> pred_probs, std::span<const double> gt_mask, double threshold) {
  if (pred_probs.size() != gt_mask.size()) {
    throw ContractError("dice: prediction has " + std::to_string(pred_probs.size()) + " values, mask " +
                        std::to_string(gt_mask.size()));
  }
  std::size_t predicted = 0, truth = 0, overlap = 0;
  for (std::size_t i = 0; i < pred_probs.size(); ++i) {
    const bool p = pred_probs[i] > threshold;
    const bool g = gt_mask[i] > 0.5;
    predicted += p;
    truth += g;
    overlap += p && g;
  }
  if (predicted + truth == 0) return 1.0;
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(predicted + truth);
}

double dice(const Tensor& pred_probs, const Tensor& gt_mask, double threshold) {
  if (pred_probs.shape() != gt_mask.shape()) {
    throw ContractError("dice: shapes " + shape_string(pred_probs.shape()) + " and " + shape_string(gt_mask.shape()) +
                        " differ");
  }
  return dice(pred_probs.values(), gt_mask.values(), threshold);
}

double evaluate(const ModelParams& model, std::span<const Patch> testset) {
  if (testset.empty()) throw ContractError("evaluate: empty test set");
  return evaluate(model, stack_images(testset), stack_masks(testset));
}

double evaluate(const ModelParams& model, const Tensor& images, const Tensor& masks) {
  if (images.shape() != masks.shape()) throw ContractError("evaluate: image and mask stacks differ in shape");
  if (images.rank() != 4 || images.dim(0) == 0) throw ContractError("evaluate: empty test set");
  const Tensor probs = predict_probabilities(model, images);
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / n;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += dice(std::span<const double>(probs.data() + i * per, per), std::span<const double>(masks.data() + i * per, per));
  }
  return total / static_cast<double>(n);
}

void RunHistory::validate() const {
  std::map<std::pair<std::string, std::uint64_t>, int> last_epoch;
  for (const auto& r : rows) {
    if (!(r.test_dice >= 0.0 && r.test_dice <= 1.0)) throw ContractError("history: dice outside [0,1]");
    auto key = std::make_pair(r.method, r.seed);
    auto it = last_epoch.find(key);
    if (it != last_epoch.end() && r.epoch <= it->second) {
      throw ContractError("history: epochs not strictly increasing for method " + r.method);
    }
    last_epoch[key] = r.epoch;
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string history_csv(const RunHistory& history) {
  std::ostringstream os;
  os << kHistoryHeader << '\n';
  for (const auto& r : history.rows) {
    os << r.epoch << ',' << r.stage << ',' << r.method << ',' << r.seed << ',' << r.shift << ','
       << format_double(r.test_dice) << ',' << format_double(r.train_loss) << ',' << r.n_rejected_clients << ','
       << r.temporal_rollback << '\n';
  }
  return os.str();
}

RunHistory parse_history_csv(const std::string& text) {
  RunHistory h;
  for (const auto& line : csv_lines(text, kHistoryHeader)) {
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw ContractError("history csv: expected 9 fields in '" + line + "'");
    HistoryRow r;
    r.epoch = std::stoi(f[0]);
    r.stage = std::stoi(f[1]);
    r.method = f[2];
    r.seed = std::stoull(f[3]);
    r.shift = f[4];
    r.test_dice = parse_double(f[5]);
    r.train_loss = parse_double(f[6]);
    r.n_rejected_clients = std::stoi(f[7]);
    r.temporal_rollback = std::stoi(f[8]);
    h.rows.push_back(std::move(r));
  }
  return h;
}

void write_csv(const RunHistory& history, const std::filesystem::path& path) {
  write_text_file(path, history_csv(history));
}

RunHistory read_csv(const std::filesystem::path& path) { return parse_history_csv(read_text_file(path)); }

std::string gate_log_csv(std::span<const GateLogRow> rows) {
  std::ostringstream os;
  os << kGateLogHeader << '\n';
  for (const auto& r : rows) {
    os << r.round << ',' << r.client << ',' << format_double(r.delta) << ',' << format_double(r.delta_max_before)
       << ',' << r.verdict << '\n';
  }
  return os.str();
}

std::vector<GateLogRow> parse_gate_log_csv(const std::string& text) {
  std::vector<GateLogRow> rows;
  for (const auto& line : csv_lines(text, kGateLogHeader)) {
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw ContractError("gate csv: expected 5 fields in '" + line + "'");
    rows.push_back({std::stoi(f[0]), f[1], parse_double(f[2]), parse_double(f[3]), f[4]});
  }
  return rows;
}

SummaryStat summarize(std::span<const double> values) {
  if (values.empty()) throw ContractError("summarize: no values");
  SummaryStat s;
  s.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.n));
  return s;
}

std::vector<SummaryRow> summarize_runs(std::span<const ScoredRun> runs) {
  struct Group {
    SummaryRow row;
    std::string config_key;
    std::set<std::uint64_t> seeds;
    std::vector<double> scores;
  };
  std::vector<Group> groups;
  for (const auto& run : runs) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return g.row.scenario == run.scenario && g.row.dataset == run.dataset && g.row.shift == run.shift &&
             g.row.method == run.method;
    });
    if (it == groups.end()) {
      groups.push_back({{run.scenario, run.dataset, run.shift, run.method, {}}, run.config_key, {}, {}});
      it = std::prev(groups.end());
    }
    if (it->config_key != run.config_key) {
      throw ContractError("summarize: runs of " + run.method + " were produced with mismatched configurations");
    }
    if (!it->seeds.insert(run.seed).second) {
      throw ContractError("summarize: seed " + std::to_string(run.seed) + " appears twice for " + run.method);
    }
    it->scores.push_back(run.score);
  }
  std::vector<SummaryRow> out;
  for (auto& g : groups) {
    g.row.stat = summarize(g.scores);
    out.push_back(g.row);
  }
  return out;
}

std::string summary_csv(std::span<const SummaryRow> rows) {
  std::ostringstream os;
  os << "scenario,dataset,shift,method,n_seeds,mean_dice,std_dice\n";
  for (const auto& r : rows) {
    os << r.scenario << ',' << r.dataset << ',' << r.shift << ',' << r.method << ',' << r.stat.n << ','
       << format_double(r.stat.mean) << ',' << format_double(r.stat.std) << '\n';
  }
  return os.str();
}

std::string summary_markdown(std::span<const SummaryRow> rows) {
  std::ostringstream os;
  os << "| scenario | dataset | shift | method | seeds | dice (mean ± std) |\n";
  os << "|---|---|---|---|---|---|\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", r.stat.mean, r.stat.std);
    os << "| " << r.scenario << " | " << r.dataset << " | " << r.shift << " | " << r.method << " | " << r.stat.n
       << " | " << buf << " |\n";
  }
  return os.str();
}

std::string render_curves(const RunHistory& history, const std::string& title) {
  if (history.rows.empty()) throw ContractError("render_curves: empty history");
  // method -> epoch -> (sum, count), methods in first-seen order.
  std::vector<std::string> methods;
  std::map<std::string, std::map<int, std::pair<double, int>>> series;
  int max_epoch = 1;
  for (const auto& r : history.rows) {
    if (!series.count(r.method)) methods.push_back(r.method);
    auto& cell = series[r.method][r.epoch];
    cell.first += r.test_dice;
    cell.second += 1;
    max_epoch = std::max(max_epoch, r.epoch);
  }

  const double width = 640, height = 400, left = 60, right = 150, top = 40, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  auto px = [&](int epoch) { return left + plot_w * (max_epoch > 1 ? (epoch - 1.0) / (max_epoch - 1.0) : 0.5); };
  auto py = [&](double d) { return top + plot_h * (1.0 - std::clamp(d, 0.0, 1.0)); };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  if (!title.empty()) {
    os << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
  }
  os << "<g stroke=\"black\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
     << "\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h << "\"/>\n";
  os << "</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double d = i / 4.0;
    os << "<text x=\"" << left - 8 << "\" y=\"" << py(d) + 4 << "\" text-anchor=\"end\">" << d << "</text>\n";
  }
  os << "<text x=\"" << left << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">1</text>\n";
  os << "<text x=\"" << left + plot_w << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">" << max_epoch
     << "</text>\n";
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">epoch</text>\n";
  os << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << top + plot_h / 2 << ")\">dice</text>\n";
  os << "</g>\n";

  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* color = kPalette[m % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" data-method=\""
       << xml_escape(methods[m]) << "\" points=\"";
    bool first = true;
    for (const auto& [epoch, acc] : series[methods[m]]) {
      if (!first) os << ' ';
      first = false;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f,%.2f", px(epoch), py(acc.first / acc.second));
      os << buf;
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(m);
    os << "<line x1=\"" << left + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + plot_w + 32 << "\" y2=\""
       << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + plot_w + 38 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(methods[m]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string() + ": write failed");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace dynfed
