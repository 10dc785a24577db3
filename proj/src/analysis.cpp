#include "jmatch/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace jmatch::analysis {

std::size_t strategy_tokens(Strategy strategy, std::size_t height, std::size_t width, std::size_t step) {
  if (step == 0) throw std::invalid_argument("skip step must be positive");
  const std::size_t n = 2 * height * width;
  switch (strategy) {
    case Strategy::Transformer:
      return n * n;
    case Strategy::Vim:
      return 2 * n;
    case Strategy::VMamba:
      return 4 * n;
    case Strategy::EVMamba:
    case Strategy::Jego:
      // the step^2 skip slices partition the N features
      return n;
  }
  return 0;
}

std::vector<StrategyLedger> ledger(std::size_t height, std::size_t width, std::size_t step) {
  auto row = [&](Strategy s, std::string name, int dirs, bool omni, bool global) {
    return StrategyLedger{s, std::move(name), strategy_tokens(s, height, width, step), dirs, omni, global,
                          s == Strategy::Transformer};
  };
  return {row(Strategy::Transformer, "Transformer", 0, false, true), row(Strategy::EVMamba, "EVMamba", 4, false, false),
          row(Strategy::Vim, "Vim", 2, false, true), row(Strategy::VMamba, "VMamba", 4, true, true),
          row(Strategy::Jego, "JEGO", 4, true, true)};
}

void write_ledger_csv(std::ostream& os, const std::vector<StrategyLedger>& rows) {
  os << "strategy,directions,omnidirectional,global,complexity,tokens\n";
  for (const auto& r : rows) {
    const char* complexity = r.pairwise                    ? "N^2"
                             : r.strategy == Strategy::Vim    ? "2N"
                             : r.strategy == Strategy::VMamba ? "4N"
                                                              : "N";
    os << r.name << ',' << r.directions << ',' << (r.omnidirectional ? "yes" : "no") << ','
       << (r.global ? "yes" : "no") << ',' << complexity << ',' << r.tokens << '\n';
  }
}

ReachabilityMap::ReachabilityMap(const jego::ScanLayout& layout, std::size_t radius) : layout_(layout) {
  const std::size_t n = layout.token_count();
  scan_.assign(n, PositionSet(n));
  for (const auto& dir : layout.directions) {
    PositionSet prefix(n);
    for (const auto& coord : dir.order) {
      const std::size_t idx = layout.pair_index(layout.to_pair(dir.grid, coord));
      prefix.set(idx);
      scan_[idx] = prefix;
    }
  }

  const auto h = static_cast<long>(layout.height), w = static_cast<long>(layout.width);
  const auto r = static_cast<long>(radius);
  aggregated_.assign(n, PositionSet(n));
  for (std::size_t image = 0; image < 2; ++image)
    for (long row = 0; row < h; ++row)
      for (long col = 0; col < w; ++col) {
        const std::size_t self = layout.pair_index({image, std::size_t(row), std::size_t(col)});
        PositionSet& out = aggregated_[self];
        for (long dr = -r; dr <= r; ++dr)
          for (long dc = -r; dc <= r; ++dc) {
            const long rr = row + dr, cc = col + dc;
            if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
            out |= scan_[layout.pair_index({image, std::size_t(rr), std::size_t(cc)})];
          }
      }

  const std::size_t bh = (layout.height + 1) / 2, bw = (layout.width + 1) / 2;
  blocks_ = 2 * bh * bw;
  block_of_.resize(n);
  for (std::size_t image = 0; image < 2; ++image)
    for (std::size_t row = 0; row < layout.height; ++row)
      for (std::size_t col = 0; col < layout.width; ++col) {
        block_of_[layout.pair_index({image, row, col})] = (image * bh + row / 2) * bw + col / 2;
      }
}

double ReachabilityMap::block_coverage(const jego::PairPos& p) const {
  const PositionSet& reach = aggregated(p);
  std::vector<bool> hit(blocks_, false);
  for (auto i = reach.find_first(); i != PositionSet::npos; i = reach.find_next(i)) hit[block_of_[i]] = true;
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / static_cast<double>(blocks_);
}

double ReachabilityMap::token_coverage(const jego::PairPos& p) const {
  const PositionSet& reach = aggregated(p);
  return static_cast<double>(reach.count()) / static_cast<double>(reach.size());
}

PositionSet scan_receptive(const jego::ScanLayout& layout, const jego::PairPos& p) {
  return ReachabilityMap(layout, 0).scan(p);
}

PositionSet aggregated_receptive(const jego::ScanLayout& layout, const jego::PairPos& p, std::size_t radius) {
  return ReachabilityMap(layout, radius).aggregated(p);
}

CoverageReport coverage_report(std::size_t height, std::size_t width, jego::ScanStyle style, std::size_t radius) {
  CoverageReport report;
  report.height = height;
  report.width = width;
  if (height == 0 || width == 0) return report;
  const ReachabilityMap map(jego::build_layout(height, width, 2, style), radius);

  report.min = 1.0;
  report.interior_min = 1.0;
  double sum = 0;
  for (std::size_t image = 0; image < 2; ++image)
    for (std::size_t row = 0; row < height; ++row)
      for (std::size_t col = 0; col < width; ++col) {
        CoverageEntry e;
        e.pos = {image, row, col};
        e.coverage = map.block_coverage(e.pos);
        e.token_coverage = map.token_coverage(e.pos);
        e.interior = row > 0 && col > 0 && row + 1 < height && col + 1 < width;
        report.min = std::min(report.min, e.coverage);
        if (e.interior) report.interior_min = std::min(report.interior_min, e.coverage);
        sum += e.coverage;
        report.entries.push_back(e);
      }
  report.mean = sum / static_cast<double>(report.entries.size());
  return report;
}

void write_coverage_csv(std::ostream& os, const CoverageReport& report) {
  os << "image,row,col,coverage,token_coverage\n";
  os << std::setprecision(6) << std::fixed;
  for (const auto& e : report.entries) {
    os << (e.pos.image == 0 ? 'A' : 'B') << ',' << e.pos.row << ',' << e.pos.col << ',' << e.coverage << ','
       << e.token_coverage << '\n';
  }
}

GrayImage coverage_heatmap(const CoverageReport& report) {
  GrayImage img(2 * report.width, report.height);
  for (const auto& e : report.entries) {
    img.at(e.pos.image * report.width + e.pos.col, e.pos.row) = static_cast<float>(std::lround(255.0 * e.coverage));
  }
  return img;
}

}  // namespace jmatch::analysis
