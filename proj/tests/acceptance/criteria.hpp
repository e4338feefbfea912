#pragma once

#include <functional>
#include <string>
#include <vector>

namespace nmt::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

// The ten acceptance criteria, in order.
std::vector<Criterion> all_criteria();

}  // namespace nmt::acceptance
