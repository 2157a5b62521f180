#include "hfrwkv/cycles.hpp"

#include <json.hpp>

#include "hfrwkv/status.hpp"

namespace hfrwkv {

std::string CycleReport::to_json() const {
  nlohmann::ordered_json j;
  j["op"] = op;
  j["l"] = l;
  j["d"] = d;
  j["cycles"] = cycles;
  return j.dump();
}

namespace {

void require_positive(int64_t v, const char* what) {
  if (v <= 0) throw ContractError(std::string(what) + " must be positive");
}

}  // namespace

int64_t matvec_cycles(int64_t rows, int64_t cols, int64_t lanes) {
  require_positive(rows, "rows");
  require_positive(cols, "cols");
  require_positive(lanes, "lanes");
  return (cols + 4) * ceil_div(rows, lanes);
}

int64_t elementwise_cycles(int64_t l, int64_t lanes) {
  require_positive(l, "l");
  require_positive(lanes, "lanes");
  return ceil_div(l, lanes) + 4;
}

int64_t atac_cycles(int64_t d, int64_t tree_par) {
  require_positive(d, "d");
  require_positive(tree_par, "tree parallelism");
  return ceil_div(d, tree_par) + 9;
}

int64_t complex_unit_cycles(int64_t l, int64_t units) {
  require_positive(l, "l");
  require_positive(units, "units");
  return ceil_div(l, units) + 3;
}

void CycleLedger::append(const CycleLedger& other) {
  reports_.insert(reports_.end(), other.reports_.begin(), other.reports_.end());
}

int64_t CycleLedger::total() const {
  int64_t t = 0;
  for (const auto& r : reports_) t += r.cycles;
  return t;
}

std::map<std::string, int64_t> CycleLedger::by_op() const {
  std::map<std::string, int64_t> m;
  for (const auto& r : reports_) m[r.op] += r.cycles;
  return m;
}

}  // namespace hfrwkv
