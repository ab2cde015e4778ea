#include <catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "tenma/model_file.hpp"
#include "tenma/tnsr_io.hpp"

using namespace tenma;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string tnsr_bytes(std::vector<std::size_t> dims, std::vector<double> values) {
  std::ostringstream os;
  write_tnsr(os, dims, values);
  return os.str();
}

RawTensor read_bytes(const std::string& bytes) {
  std::istringstream is(bytes);
  return read_tnsr(is, "mem");
}

std::string error_of(const std::string& bytes) {
  try {
    read_bytes(bytes);
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

ModelFile small_model() {
  ModelFile m;
  m.family = Family::gaussian(0.37);
  m.shape = Shape{3, 2};
  m.ranks = {1, 2};
  m.candidates = {{1, 4.0, -12.5, 33.0, 36.1}, {2, 6.0, -10.25, 32.5, 37.8}};
  m.methods.push_back({"AIC", 2, 32.5, 1.75, {0.0, 1.0}});
  m.methods.push_back({"EQMA", std::nullopt, std::numeric_limits<double>::quiet_NaN(), 1.5, {0.5, 0.5}});
  m.methods.push_back({"TRMA", std::nullopt, 1.25, 1.25, {0.3, 0.7}});
  Matrix a1(3, 1), b1(2, 1), a2(3, 2), b2(2, 2);
  a1 << 1.0, -2.0, 0.1;
  b1 << 0.5, 3.0;
  a2 << 0.2, 1.0, -1.0, 0.0, 1.0 / 3.0, 2.0;
  b2 << 1.0, 0.5, -0.25, 4.0;
  m.estimates.emplace_back(m.shape, std::vector<Matrix>{a1, b1});
  m.estimates.emplace_back(m.shape, std::vector<Matrix>{a2, b2});
  m.estimate = axpy_cp(std::vector<double>{0.3, 0.7}, m.estimates);
  return m;
}

}  // namespace

TEST_CASE("TNSR round trip preserves dims and bits") {
  const std::vector<double> v{0.1, -2.5, 1e-300, std::numeric_limits<double>::max(), -0.0, 7.0};
  const std::string bytes = tnsr_bytes({3, 2}, v);
  CHECK(bytes.size() == 4 + 4 + 4 + 2 * 8 + 6 * 8);
  CHECK(bytes.substr(0, 4) == "TNSR");
  const RawTensor t = read_bytes(bytes);
  CHECK(t.dims == std::vector<std::size_t>{3, 2});
  REQUIRE(t.values.size() == v.size());
  CHECK(std::memcmp(t.values.data(), v.data(), v.size() * sizeof(double)) == 0);
}

TEST_CASE("TNSR header layout is little-endian") {
  const std::string bytes = tnsr_bytes({5}, std::vector<double>(5, 1.0));
  const auto u8 = [&](std::size_t i) { return static_cast<unsigned char>(bytes[i]); };
  CHECK(u8(4) == 1);  // version
  CHECK(u8(8) == 1);  // order
  CHECK(u8(12) == 5);  // first dim
  for (std::size_t i = 13; i < 20; ++i) CHECK(u8(i) == 0);
}

TEST_CASE("TNSR errors report what went wrong and where") {
  const std::string good = tnsr_bytes({2, 2}, {1, 2, 3, 4});
  CHECK_THAT(error_of(good.substr(0, good.size() - 3)), ContainsSubstring("truncated data at byte 57"));
  CHECK_THAT(error_of(good.substr(0, 2)), ContainsSubstring("truncated magic at byte 2"));
  std::string bad = good;
  bad[0] = 'X';
  CHECK_THAT(error_of(bad), ContainsSubstring("bad magic at byte 0"));
  bad = good;
  bad[4] = 9;
  CHECK_THAT(error_of(bad), ContainsSubstring("unsupported TNSR version 9 at byte 4"));
  bad = good;
  std::memset(bad.data() + 20, 0, 8);
  CHECK_THAT(error_of(bad), ContainsSubstring("dimension 2 is zero at byte 20"));
  bad = good;
  std::memset(bad.data() + 8, 0, 4);
  CHECK_THAT(error_of(bad), ContainsSubstring("implausible dimension count 0"));

  std::ostringstream os;
  CHECK_THROWS_AS(write_tnsr(os, std::vector<std::size_t>{2, 0}, std::vector<double>{}), InputError);
  CHECK_THROWS_AS(write_tnsr(os, std::vector<std::size_t>{2}, std::vector<double>{1.0}), InputError);
}

TEST_CASE("TNSR files reject trailing bytes and hold covariate stacks") {
  const auto dir = std::filesystem::temp_directory_path() / "tenma_test_io";
  std::filesystem::create_directories(dir);
  const Shape shape{2, 3};
  std::vector<double> v(shape.total_size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) * 0.5;
  const TensorStack stack(shape, 4, v);
  write_stack(dir / "x.tnsr", stack);
  const TensorStack back = read_stack(dir / "x.tnsr");
  CHECK(back.count() == 4);
  CHECK(back.shape() == shape);
  CHECK(std::equal(back.values().begin(), back.values().end(), v.begin()));

  {
    std::ofstream os(dir / "x.tnsr", std::ios::binary | std::ios::app);
    os << 'z';
  }
  CHECK_THROWS_WITH(read_stack(dir / "x.tnsr"), ContainsSubstring("trailing bytes"));
  CHECK_THROWS_AS(read_tensor(dir / "missing.tnsr"), InputError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("response files") {
  std::istringstream ok("# header\n1.5\n\n  -2\n+3e2\n");
  CHECK(read_responses(ok, "y.csv") == std::vector<double>{1.5, -2.0, 300.0});
  std::istringstream bad("1\n2\nabc\n");
  CHECK_THROWS_WITH(read_responses(bad, "y.csv"), ContainsSubstring("y.csv:3: not a number: 'abc'"));
  std::istringstream empty("# nothing\n");
  CHECK_THROWS_WITH(read_responses(empty, "y.csv"), ContainsSubstring("no responses"));
}

TEST_CASE("number text is exact and fields are trimmed") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-310, 6.02214076e23}) {
    double back = 0.0;
    REQUIRE(parse_double(exact_number(v), back));
    CHECK(back == v);
  }
  double x = 0.0;
  CHECK_FALSE(parse_double("1.5x", x));
  CHECK_FALSE(parse_double("", x));
  const auto f = split_commas(" a , b,,c ");
  REQUIRE(f.size() == 4);
  CHECK(f[0] == "a");
  CHECK(f[2].empty());
  CHECK(f[3] == "c");
}

TEST_CASE("model file round trip") {
  const ModelFile m = small_model();
  std::stringstream ss;
  write_model(ss, m);
  const ModelFile back = read_model(ss, "model");
  CHECK(back.family.kind == FamilyKind::gaussian);
  CHECK(back.family.dispersion == 0.37);
  CHECK(back.shape == m.shape);
  CHECK(back.ranks == m.ranks);
  REQUIRE(back.candidates.size() == 2);
  CHECK(back.candidates[1].log_likelihood == -10.25);
  REQUIRE(back.methods.size() == 3);
  CHECK(back.method("AIC").selected_rank == std::optional<std::size_t>(2));
  CHECK_FALSE(back.method("EQMA").selected_rank);
  CHECK(std::isnan(back.method("EQMA").criterion));
  CHECK(back.method("TRMA").weights == std::vector<double>{0.3, 0.7});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t d = 0; d < 2; ++d) CHECK(back.estimates[s].factor(d) == m.estimates[s].factor(d));
  CHECK(back.coefficient().vec() == m.estimate.vec());
  CHECK(back.coefficient("AIC").vec() == cp_to_dense(m.estimates[1]).vec());
  CHECK_THROWS_AS(back.method("LASSO"), InputError);

  std::stringstream again;
  write_model(again, back);
  CHECK(again.str() == ss.str());
}

TEST_CASE("damaged model files are rejected with a location") {
  std::stringstream ss;
  write_model(ss, small_model());
  const std::string text = ss.str();

  std::istringstream cut(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(read_model(cut, "m"), InputError);

  std::string bad = text;
  bad.replace(bad.find("tenma-model 1"), 13, "tenma-model 7");
  std::istringstream v(bad);
  CHECK_THROWS_WITH(read_model(v, "m"), ContainsSubstring("m:1: unsupported model format version"));

  bad = text;
  bad.replace(bad.find("0.3,0.7"), 7, "0.9,0.7");
  std::istringstream w(bad);
  CHECK_THROWS_AS(read_model(w, "m"), InputError);

  bad = text;
  bad.replace(bad.find("family gaussian"), 15, "family gamma   ");
  std::istringstream f(bad);
  CHECK_THROWS_AS(read_model(f, "m"), InputError);
}
