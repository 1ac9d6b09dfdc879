#include "dsink/eval_metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dsink/error.hpp"

namespace dsink::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

double parse_double(const std::string& s, std::size_t line_no, const char* column) {
  if (s == "nan") return kNaN;
  double x = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw Error(ErrorKind::kIo, "results table line " + std::to_string(line_no) + ": bad " +
                                    column + " value '" + s + "'");
  }
  return x;
}

double percent(std::size_t hit, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

ClassSplits split_classes(std::span<const std::size_t> class_counts) {
  const auto classes = static_cast<int>(class_counts.size());
  if (classes < 3) {
    throw Error(ErrorKind::kInvalidArgument, "split_classes needs at least 3 classes");
  }
  std::vector<int> order(static_cast<std::size_t>(classes));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return class_counts[static_cast<std::size_t>(a)] > class_counts[static_cast<std::size_t>(b)];
  });
  const int edge = static_cast<int>(std::lround(0.3 * classes));
  ClassSplits s;
  s.many.assign(order.begin(), order.begin() + edge);
  s.medium.assign(order.begin() + edge, order.end() - edge);
  s.few.assign(order.end() - edge, order.end());
  return s;
}

std::vector<std::uint32_t> predict_labels(const Eigen::MatrixXd& probs) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.rows(); ++c)
      if (probs(c, i) > probs(best, i)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
  }
  return out;
}

double rank_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) {
    throw Error(ErrorKind::kInvalidArgument, "rank_auc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo;
    while (hi + 1 < n && scores[order[hi + 1]] == scores[order[lo]]) ++hi;
    const double avg_rank = 0.5 * static_cast<double>(lo + hi) + 1.0;  // 1-based
    for (std::size_t k = lo; k <= hi; ++k) {
      if (positive[order[k]]) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    lo = hi + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return kNaN;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

EvalReport evaluate(const Eigen::MatrixXd& probs, std::span<const std::uint32_t> true_labels,
                    std::span<const std::size_t> train_counts) {
  const auto classes = static_cast<std::size_t>(probs.rows());
  if (static_cast<std::size_t>(probs.cols()) != true_labels.size() || train_counts.size() != classes) {
    throw Error(ErrorKind::kInvalidArgument, "evaluate: shape mismatch between predictions, "
                                             "labels and class counts");
  }
  const std::vector<std::uint32_t> pred = predict_labels(probs);

  std::vector<std::size_t> support(classes, 0), predicted(classes, 0), hits(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::uint32_t y = true_labels[i];
    if (y >= classes) throw Error(ErrorKind::kInvalidArgument, "evaluate: label out of range");
    ++support[y];
    ++predicted[pred[i]];
    if (pred[i] == y) {
      ++hits[y];
      ++correct;
    }
  }

  EvalReport report;
  report.overall_acc = percent(correct, pred.size());
  report.per_class_acc.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) report.per_class_acc[c] = percent(hits[c], support[c]);

  const ClassSplits splits = split_classes(train_counts);
  auto split_acc = [&](const std::vector<int>& members) {
    std::size_t h = 0, s = 0;
    for (int c : members) {
      h += hits[static_cast<std::size_t>(c)];
      s += support[static_cast<std::size_t>(c)];
    }
    return percent(h, s);
  };
  report.many_acc = split_acc(splits.many);
  report.medium_acc = split_acc(splits.medium);
  report.few_acc = split_acc(splits.few);

  double f1_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (support[c] == 0 && predicted[c] == 0) {
      f1_sum += 1.0;
    } else {
      // 2TP / (2TP + FP + FN)
      const double tp = static_cast<double>(hits[c]);
      const double fp = static_cast<double>(predicted[c] - hits[c]);
      const double fn = static_cast<double>(support[c] - hits[c]);
      f1_sum += 2.0 * tp / (2.0 * tp + fp + fn);
    }
  }
  report.macro_f1 = f1_sum / static_cast<double>(classes);

  double auc_sum = 0.0;
  std::size_t auc_classes = 0;
  std::vector<double> scores(pred.size());
  std::vector<std::uint8_t> positive(pred.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      scores[i] = probs(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i));
      positive[i] = true_labels[i] == c;
    }
    const double auc = rank_auc(scores, positive);
    if (!std::isnan(auc)) {
      auc_sum += auc;
      ++auc_classes;
    }
  }
  report.macro_auc = auc_classes == 0 ? kNaN : auc_sum / static_cast<double>(auc_classes);
  report.noise_correction_rate = kNaN;
  return report;
}

double noise_correction_rate(const Eigen::MatrixXd& probs, const data::Dataset& ds) {
  if (static_cast<std::size_t>(probs.cols()) != ds.size()) {
    throw Error(ErrorKind::kInvalidArgument, "noise_correction_rate: prediction count mismatch");
  }
  const std::vector<std::uint32_t> pred = predict_labels(probs);
  std::size_t noisy = 0, corrected = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.observed_labels[i] == ds.true_labels[i]) continue;
    ++noisy;
    corrected += pred[i] == ds.true_labels[i];
  }
  if (noisy == 0) {
    throw Error(ErrorKind::kInvalidArgument, "noise_correction_rate: dataset has no noisy labels");
  }
  return static_cast<double>(corrected) / static_cast<double>(noisy);
}

std::string recipe_tag(const data::DatasetRecipe& r) {
  std::ostringstream os;
  os << "C=" << r.num_classes << ";base=" << r.base_per_class << ";IR=" << fmt(r.imbalance_ratio)
     << ";noise=" << data::to_string(r.noise_mode) << ";NR=" << fmt(r.noise_ratio)
     << ";d=" << r.feature_dim << ";sep=" << fmt(r.class_separation) << ";seed=" << r.seed;
  return os.str();
}

std::string csv_header() {
  return "arm,seed,overall_acc,many_acc,medium_acc,few_acc,macro_f1,macro_auc,"
         "noise_correction_rate,recipe,log_file";
}

std::string to_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << r.arm << ',' << r.seed << ',' << fmt(r.overall_acc) << ',' << fmt(r.many_acc) << ','
     << fmt(r.medium_acc) << ',' << fmt(r.few_acc) << ',' << fmt(r.macro_f1) << ','
     << fmt(r.macro_auc) << ',' << fmt(r.noise_correction_rate) << ',' << r.recipe << ','
     << r.log_file;
  return os.str();
}

EvalReport parse_csv_row(const std::string& line, std::size_t line_no) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  if (cells.size() != 11) {
    throw Error(ErrorKind::kIo, "results table line " + std::to_string(line_no) + ": expected 11 " +
                                    "columns, found " + std::to_string(cells.size()));
  }
  EvalReport r;
  r.arm = cells[0];
  if (r.arm.empty()) {
    throw Error(ErrorKind::kIo, "results table line " + std::to_string(line_no) + ": empty arm");
  }
  {
    auto [end, ec] = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), r.seed);
    if (ec != std::errc() || end != cells[1].data() + cells[1].size()) {
      throw Error(ErrorKind::kIo, "results table line " + std::to_string(line_no) +
                                      ": bad seed value '" + cells[1] + "'");
    }
  }
  r.overall_acc = parse_double(cells[2], line_no, "overall_acc");
  r.many_acc = parse_double(cells[3], line_no, "many_acc");
  r.medium_acc = parse_double(cells[4], line_no, "medium_acc");
  r.few_acc = parse_double(cells[5], line_no, "few_acc");
  r.macro_f1 = parse_double(cells[6], line_no, "macro_f1");
  r.macro_auc = parse_double(cells[7], line_no, "macro_auc");
  r.noise_correction_rate = parse_double(cells[8], line_no, "noise_correction_rate");
  r.recipe = cells[9];
  r.log_file = cells[10];
  return r;
}

void append_report(const std::filesystem::path& path, const EvalReport& report) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorKind::kIo, "cannot open results table " + path.string());
  if (fresh) out << csv_header() << '\n';
  out << to_csv_row(report) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "failed writing results table " + path.string());
}

std::vector<EvalReport> read_reports(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open results table " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<EvalReport> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != csv_header()) {
        throw Error(ErrorKind::kIo, "results table line 1: unexpected header");
      }
      continue;
    }
    if (line.empty()) continue;
    rows.push_back(parse_csv_row(line, line_no));
  }
  if (rows.empty()) throw Error(ErrorKind::kIo, "results table " + path.string() + " is empty");
  return rows;
}

}  // namespace dsink::eval
