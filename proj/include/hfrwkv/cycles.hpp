#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace hfrwkv {

/// Latency of one hardware operation. Serializes as {"op","l","d","cycles"}.
struct CycleReport {
  std::string op;
  int64_t l = 0;  // input dimension
  int64_t d = 0;  // lanes or tree parallelism
  int64_t cycles = 0;

  std::string to_json() const;
  friend bool operator==(const CycleReport&, const CycleReport&) = default;
};

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

/// Matrix-vector latency for `rows` outputs over `cols` inputs: each pass
/// streams every column through `lanes` PMACs, (cols + 4) cycles per pass.
/// Square matrices reduce to (l + 4) * (l / d).
int64_t matvec_cycles(int64_t rows, int64_t cols, int64_t lanes);
/// Element-wise multiply/add latency: ceil(l / d) + 4.
int64_t elementwise_cycles(int64_t l, int64_t lanes);
/// ATAC summation latency: ceil(d / P) + 9.
int64_t atac_cycles(int64_t d, int64_t tree_par);
/// Replicated divider / exp-sigmoid units: ceil(l / units) + 3 pipeline stages.
int64_t complex_unit_cycles(int64_t l, int64_t units);

inline constexpr int64_t kComplexUnits = 128;

/// Append-only collection of reports for one forward pass or run.
class CycleLedger {
 public:
  void add(CycleReport r) { reports_.push_back(std::move(r)); }
  void append(const CycleLedger& other);
  const std::vector<CycleReport>& reports() const { return reports_; }
  int64_t total() const;
  std::map<std::string, int64_t> by_op() const;
  void clear() { reports_.clear(); }

 private:
  std::vector<CycleReport> reports_;
};

}  // namespace hfrwkv
