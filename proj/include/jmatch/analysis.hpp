#pragma once

#include <boost/dynamic_bitset.hpp>
#include <iosfwd>
#include <string>
#include <vector>

#include "jmatch/image.hpp"
#include "jmatch/jego.hpp"

namespace jmatch::analysis {

enum class Strategy { Transformer, EVMamba, Vim, VMamba, Jego };

struct StrategyLedger {
  Strategy strategy;
  std::string name;
  std::size_t tokens = 0;  // pairwise interactions for the transformer
  int directions = 0;
  bool omnidirectional = false;
  bool global = false;
  bool pairwise = false;   // count is N^2 rather than a sequence length
};

/// Tokens processed by one layer over an H x W pair (N = 2HW features).
std::size_t strategy_tokens(Strategy strategy, std::size_t height, std::size_t width, std::size_t step = 2);

std::vector<StrategyLedger> ledger(std::size_t height, std::size_t width, std::size_t step = 2);

/// "strategy,directions,omnidirectional,global,complexity,tokens"
void write_ledger_csv(std::ostream& os, const std::vector<StrategyLedger>& rows);

using PositionSet = boost::dynamic_bitset<>;

/// Bitsets are indexed by ScanLayout::pair_index.
class ReachabilityMap {
 public:
  /// `radius` 1 is one 3x3 aggregation hop; 0 keeps only the scan cones.
  explicit ReachabilityMap(const jego::ScanLayout& layout, std::size_t radius = 1);

  const jego::ScanLayout& layout() const { return layout_; }
  std::size_t positions() const { return scan_.size(); }

  /// Inclusive prefix of the position's directional sequence.
  const PositionSet& scan(const jego::PairPos& p) const { return scan_[layout_.pair_index(p)]; }
  /// Union of scan cones over the same-image neighbourhood.
  const PositionSet& aggregated(const jego::PairPos& p) const { return aggregated_[layout_.pair_index(p)]; }

  /// Share of 2x2 skip cells holding at least one reachable position.
  double block_coverage(const jego::PairPos& p) const;
  /// Share of individual positions reached.
  double token_coverage(const jego::PairPos& p) const;

 private:
  jego::ScanLayout layout_;
  std::vector<PositionSet> scan_;
  std::vector<PositionSet> aggregated_;
  std::vector<std::size_t> block_of_;
  std::size_t blocks_ = 0;
};

PositionSet scan_receptive(const jego::ScanLayout& layout, const jego::PairPos& p);
PositionSet aggregated_receptive(const jego::ScanLayout& layout, const jego::PairPos& p, std::size_t radius = 1);

struct CoverageEntry {
  jego::PairPos pos;
  double coverage = 0;        // skip-cell level
  double token_coverage = 0;
  bool interior = false;
};

struct CoverageReport {
  std::size_t height = 0, width = 0;
  std::vector<CoverageEntry> entries;  // pair_index order
  double min = 0, mean = 0;
  double interior_min = 0;

  bool empty() const { return entries.empty(); }
};

CoverageReport coverage_report(std::size_t height, std::size_t width, jego::ScanStyle style = jego::ScanStyle::Jego,
                               std::size_t radius = 1);

/// "image,row,col,coverage,token_coverage"
void write_coverage_csv(std::ostream& os, const CoverageReport& report);

/// Joint [A | B] heatmap, H x 2W, coverage scaled to 0..255.
GrayImage coverage_heatmap(const CoverageReport& report);

}  // namespace jmatch::analysis
