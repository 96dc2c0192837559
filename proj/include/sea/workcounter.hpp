#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace sea {

// Instrumented work accounting. Kernels report multiply-accumulates and
// value touches as they run; peak memory is derived analytically from shapes
// by the benchmark harness, not measured here. Counters are thread-local so
// batch-parallel runs do not race; disabled counting is a single branch.
class WorkCounter {
 public:
  struct Stage {
    uint64_t macs = 0;     // multiply-accumulate operations
    uint64_t touches = 0;  // stored values read or written by sparse kernels
    uint64_t nnz = 0;      // nonzeros emitted (mask generation)
  };

  static WorkCounter& instance();

  void enable(bool on) { enabled_ = on; }
  bool enabled() const { return enabled_; }

  void set_stage(const std::string& name) { stage_ = name; }
  const std::string& stage() const { return stage_; }

  void add_macs(uint64_t n) {
    if (enabled_) stages_[stage_].macs += n;
  }
  void add_touches(uint64_t n) {
    if (enabled_) stages_[stage_].touches += n;
  }
  void add_nnz(uint64_t n) {
    if (enabled_) stages_[stage_].nnz += n;
  }

  void reset() { stages_.clear(); }

  const std::map<std::string, Stage>& stages() const { return stages_; }
  Stage total() const {
    Stage t;
    for (const auto& [_, s] : stages_) {
      t.macs += s.macs;
      t.touches += s.touches;
      t.nnz += s.nnz;
    }
    return t;
  }

 private:
  bool enabled_ = false;
  std::string stage_ = "default";
  std::map<std::string, Stage> stages_;
};

// Scoped stage label: restores the previous label on exit.
class StageScope {
 public:
  explicit StageScope(const std::string& name)
      : prev_(WorkCounter::instance().stage()) {
    WorkCounter::instance().set_stage(name);
  }
  ~StageScope() { WorkCounter::instance().set_stage(prev_); }

 private:
  std::string prev_;
};

}  // namespace sea
