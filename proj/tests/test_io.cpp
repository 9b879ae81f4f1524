#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "avb/io.hpp"
#include "avb/verify.hpp"

using namespace avb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "avb_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::size_t parse_error_line(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_logreg_csv(in);
  } catch (const parse_error& e) {
    return e.line;
  }
  return 0;
}

}  // namespace

TEST(LogregCsv, RoundTripIsExact) {
  SeededRng rng(1);
  const LogRegDataset d = random_logreg_data(rng, 20, 3, 1.0);
  std::stringstream s;
  write_logreg_csv(s, d);
  const LogRegDataset back = parse_logreg_csv(s);
  EXPECT_EQ(back.X.data(), d.X.data());
  EXPECT_EQ(back.y, d.y);
}

TEST(LogregCsv, ParsesBomAndBlankLines) {
  std::istringstream in("\xEF\xBB\xBFy,x0,x1\n1,0.5,-2\n\n0,1e-3,3\n");
  const LogRegDataset d = parse_logreg_csv(in);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.y, (std::vector<int>{1, 0}));
  EXPECT_DOUBLE_EQ(d.X(1, 0), 1e-3);
}

TEST(LogregCsv, ErrorsCarryLineNumbers) {
  EXPECT_EQ(parse_error_line("x0,y\n"), 1u);
  EXPECT_EQ(parse_error_line("y,x0\n1,2\n0\n"), 3u);
  EXPECT_EQ(parse_error_line("y,x0\n1,2\n2,1\n"), 3u);
  EXPECT_EQ(parse_error_line("y,x0\n1,abc\n"), 2u);
  EXPECT_THROW(read_logreg_csv(scratch("missing.csv")), io_error);
}

TEST(SessionsJsonl, RoundTripWithManifest) {
  SessionDataset d;
  d.catalog_size = 7;
  d.sessions = {{0, 6, 6}, {3}};
  d.users = {10, 42};
  const fs::path path = scratch("sessions.jsonl");
  write_sessions(path, d, {{"seed", 3}});
  EXPECT_EQ(manifest_path_for(path), scratch("sessions.manifest.json"));
  const auto manifest = read_json_file(manifest_path_for(path));
  EXPECT_EQ(manifest["P"], 7);
  EXPECT_EQ(manifest["U"], 2);
  EXPECT_EQ(manifest["seed"], 3);
  const SessionDataset back = read_sessions(path);
  EXPECT_EQ(back.sessions, d.sessions);
  EXPECT_EQ(back.users, d.users);
  EXPECT_EQ(back.catalog_size, 7u);
}

TEST(SessionsJsonl, RejectsBadLines) {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_sessions_jsonl(in, 5);
    } catch (const parse_error& e) {
      return e.line;
    }
    return 0;
  };
  EXPECT_EQ(line_of("{\"user\":1,\"items\":[]}\n"), 1u);
  EXPECT_EQ(line_of("{\"user\":1,\"items\":[1]}\n{\"user\":2,\"items\":[5]}\n"), 2u);
  EXPECT_EQ(line_of("{\"user\":1,\"items\":[-1]}\n"), 1u);
  EXPECT_EQ(line_of("{\"user\":1,\"items\":[1]}\nnot json\n"), 2u);
  EXPECT_EQ(line_of("{\"items\":[1]}\n"), 1u);
}

TEST(KeyValues, ParsesCommentsAndAppliesConfig) {
  std::istringstream in("# trainer\nlearning_rate = 0.1  # inline\nepochs=7\n\noptimizer = momentum\n");
  OptimConfig c;
  apply_config(parse_key_values(in), c);
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.1);
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.optimizer, OptimizerKind::momentum);
  EXPECT_THROW(apply_config(KeyValues{{"nope", "1"}}, c), validation_error);
  EXPECT_THROW(apply_config(KeyValues{{"epochs", "-3"}}, c), validation_error);
  LvmConfig l;
  apply_config(KeyValues{{"K", "3"}, {"negatives", "20"}}, l);
  EXPECT_EQ(l.K, 3u);
  EXPECT_EQ(l.negatives, 20u);
  std::istringstream bad("epochs 4\n");
  EXPECT_THROW(parse_key_values(bad), parse_error);
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  const std::string text = "foobar";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  EXPECT_EQ(base64_encode(std::span(bytes).first(4)), "Zm9vYg==");
  EXPECT_EQ(base64_encode(bytes), "Zm9vYmFy");
  EXPECT_EQ(base64_decode("Zm9vYg=="), std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 4));
  EXPECT_THROW(base64_decode("Zm9*"), parse_error);
  const Vector v{1.0, -0.0, 1e-310, 3.141592653589793, -2.5e300};
  const Vector back = decode_doubles(encode_doubles(v));
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(v[i]));
}

TEST(Checkpoint, LogregRoundTripIsBitExact) {
  SeededRng rng(2);
  const GaussianVariational q = random_posterior(rng, 4);
  OptimConfig c;
  c.seed = 99;
  const fs::path path = scratch("logreg.ckpt.json");
  save_checkpoint(path, make_checkpoint(q, "jj", c));
  const Checkpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.trainer, "jj");
  EXPECT_EQ(loaded.seed, 99u);
  const GaussianVariational back = logreg_posterior(loaded);
  EXPECT_EQ(back.mu, q.mu);
  EXPECT_EQ(back.cov.lower().data(), q.cov.lower().data());
  EXPECT_THROW(lvm_params(loaded), validation_error);
}

TEST(Checkpoint, LvmRoundTripIsBitExact) {
  SeededRng rng(3);
  const LvmParams m = random_lvm_params(rng, 6, 2);
  const Checkpoint c = checkpoint_from_json(checkpoint_to_json(make_checkpoint(m, LvmConfig{})));
  EXPECT_EQ(c.array("w_mu").shape, (std::vector<std::size_t>{2, 6}));
  EXPECT_EQ(lvm_params(c).flatten(), m.flatten());
}

TEST(Checkpoint, RejectsVersionAndKind) {
  SeededRng rng(4);
  auto j = checkpoint_to_json(make_checkpoint(random_lvm_params(rng, 3, 1), LvmConfig{}));
  auto wrong_version = j;
  wrong_version["format_version"] = 2;
  EXPECT_THROW(checkpoint_from_json(wrong_version), validation_error);
  auto wrong_kind = j;
  wrong_kind["model_kind"] = "mystery";
  EXPECT_THROW(checkpoint_from_json(wrong_kind), validation_error);
  auto truncated = j;
  truncated["arrays"]["rho"]["shape"] = {4};
  EXPECT_THROW(checkpoint_from_json(truncated), parse_error);
  truncated.erase("seed");
  EXPECT_THROW(checkpoint_from_json(truncated), parse_error);
}
