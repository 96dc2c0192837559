#include "sea/workcounter.hpp"

namespace sea {

WorkCounter& WorkCounter::instance() {
  thread_local WorkCounter counter;
  return counter;
}

}  // namespace sea
