#include <gtest/gtest.h>

#include <sstream>

#include "seqdm/verify.h"

namespace seqdm {
namespace {

void expect_all_pass(const std::vector<CheckRow>& rows) {
  for (const auto& r : rows) {
    EXPECT_TRUE(r.pass) << r.check << " value=" << r.value << " threshold=" << r.threshold << " "
                        << r.detail;
  }
}

TEST(GradCheck, AllProgramsPass) {
  const auto rows = run_grad_check({});
  ASSERT_GE(rows.size(), 8u);
  expect_all_pass(rows);
  EXPECT_TRUE(all_pass(rows));
}

TEST(GradCheck, CorruptedGradientFailsAndNamesTheCoordinate) {
  GradCheckOptions opt;
  opt.instances = 1;
  opt.corrupt = true;
  const auto rows = run_grad_check(opt);
  EXPECT_FALSE(all_pass(rows));
  int failed = 0;
  for (const auto& r : rows) {
    if (r.pass) continue;
    ++failed;
    EXPECT_EQ(r.check, "seqmodel_log_prob_tokens");
    EXPECT_NE(r.detail.find('['), std::string::npos) << r.detail;
    EXPECT_GT(r.value, r.threshold);
  }
  EXPECT_EQ(failed, 1);
}

TEST(OracleCheck, AllEstimatorsPass) {
  const auto rows = run_oracle_check({});
  ASSERT_GE(rows.size(), 10u);
  expect_all_pass(rows);
}

TEST(CheckCsv, Schema) {
  std::ostringstream out;
  write_check_csv(out, {{"grad_check", "a", 1.5e-7, 1e-6, true, ""},
                        {"oracle_check", "b", 0.9, 0.95, false, "has, comma"}});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "suite,check,value,threshold,pass,detail");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("grad_check,a,", 0), 0u);
  EXPECT_NE(line.find(",pass,"), std::string::npos);
  std::getline(in, line);
  EXPECT_EQ(line, "oracle_check,b,0.9,0.95,fail,has; comma");
  EXPECT_FALSE(std::getline(in, line));
}

}  // namespace
}  // namespace seqdm
