#include <gtest/gtest.h>

#include "avb/verify.hpp"

using namespace avb;

namespace {

void expect_all_pass(const std::string& suite, std::size_t count) {
  const auto results = run_suite(suite);
  EXPECT_EQ(results.size(), count);
  for (const auto& r : results)
    EXPECT_TRUE(r.passed) << r.name << " worst " << r.worst << " tol " << r.tolerance << " " << r.detail;
}

}  // namespace

TEST(VerifySuite, BoundsPass) { expect_all_pass("bounds", 4); }
TEST(VerifySuite, GradientsPass) { expect_all_pass("gradients", 2); }
TEST(VerifySuite, UnbiasednessPass) { expect_all_pass("unbiasedness", 3); }

TEST(VerifySuite, UnknownSuiteRejected) { EXPECT_THROW(run_suite("speed"), validation_error); }

TEST(ScaledError, RelativeAboveOne) {
  EXPECT_DOUBLE_EQ(scaled_error(1e-8, 2e-8), 1e-8);
  EXPECT_DOUBLE_EQ(scaled_error(100.0, 101.0), 1.0 / 101.0);
}

TEST(CheckResult, JsonFields) {
  const auto j = to_json(check_jj_tangency(50));
  EXPECT_EQ(j["name"], "jj_tangency");
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_EQ(j["cases"], 50);
}
