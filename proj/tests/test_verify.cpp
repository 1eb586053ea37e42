#include <doctest.h>

#include "amnet/cost_volume.hpp"
#include "amnet/verify.hpp"

using namespace amnet;

namespace {

bool all_passed(const std::vector<CheckResult>& r) {
  for (const auto& c : r)
    if (!c.passed) return false;
  return !r.empty();
}

}  // namespace

TEST_CASE("oracle, parameter and receptive-field suites pass") {
  CHECK(all_passed(run_verify("oracle")));
  CHECK(all_passed(run_verify("params")));
  CHECK(all_passed(run_verify("receptive-field")));
  CHECK_THROWS_AS(run_verify("nonsense"), std::invalid_argument);
}

TEST_CASE("flipped distance sign is caught by the oracle suite") {
  fault_injection::set_distance_sign_flip(true);
  const auto r = run_verify("oracle");
  fault_injection::set_distance_sign_flip(false);
  bool ecv_failed = false;
  for (const auto& c : r)
    if (c.name.find("ecv") != std::string::npos && !c.passed) ecv_failed = true;
  CHECK(ecv_failed);
  CHECK(all_passed(run_verify("oracle")));
}

TEST_CASE("parameter report of the full model") {
  const auto rep = count_parameters("amnet-32");
  CHECK(rep.formula_mismatches == 0);
  CHECK(rep.total == rep.backbone + rep.am + rep.sam + rep.norm);
  CHECK(std::abs(static_cast<double>(rep.total) - kPublishedParams) / kPublishedParams <= 0.10);
  CHECK(rep.projection > 0);
}

TEST_CASE("gradient check on a reduced budget") {
  GradCheckOptions opt;
  opt.probes = 6;
  const auto rep = network_gradient_check(opt);
  CHECK(rep.probes == 6);
  CHECK(rep.max_rel_error < opt.tolerance);
}
