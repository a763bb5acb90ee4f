#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "support/testutil.hpp"
#include "vqa/container.hpp"

using namespace vqa;

namespace {

container::File sample_file() {
  container::File f;
  f.meta = {{"kind", "model"}, {"note", 1}};
  f.tensors.emplace_back("alpha", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  f.tensors.emplace_back("beta", Tensor::vector({-0.0, 1.5}));
  return f;
}

}  // namespace

TEST_CASE("container round-trips tensors bit-exactly") {
  std::stringstream ss;
  container::save(ss, sample_file());
  container::File back = container::load(ss);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.meta.at("kind") == "model");
  CHECK(back.tensors[0].first == "alpha");
  CHECK(bit_equal(back.tensors[0].second, sample_file().tensors[0].second));
  CHECK(bit_equal(back.tensors[1].second, sample_file().tensors[1].second));
  CHECK(back.find("beta") != nullptr);
  CHECK(back.find("gamma") == nullptr);
}

TEST_CASE("container file round-trip on disk") {
  testing::TempDir dir("container");
  container::save(dir / "f.bin", sample_file());
  container::File back = container::load(dir / "f.bin");
  REQUIRE(back.tensors.size() == 2);
  CHECK(bit_equal(back.tensors[1].second, sample_file().tensors[1].second));
}

TEST_CASE("bad magic is rejected") {
  std::stringstream ss;
  ss << "NOTAFILExxxxxxxxxxxxxxxx";
  CHECK_THROWS_WITH(container::load(ss),
                    Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("truncated payload names the tensor") {
  std::stringstream ss;
  container::save(ss, sample_file());
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 12);  // cut into the last tensor's payload
  std::stringstream cut(bytes);
  CHECK_THROWS_WITH(container::load(cut),
                    Catch::Matchers::ContainsSubstring("beta"));
}

TEST_CASE("truncated manifest and missing length field are flagged") {
  std::stringstream ss;
  ss.write(container::kMagic, 8);
  CHECK_THROWS_AS(container::load(ss), ParseError);

  std::stringstream full;
  container::save(full, sample_file());
  std::string bytes = full.str();
  std::stringstream cut(bytes.substr(0, 20));
  CHECK_THROWS_AS(container::load(cut), ParseError);
}

TEST_CASE("require_finite reports tensor name and flat index") {
  container::File f;
  Tensor t = Tensor::vector({1.0, std::nan(""), 3.0});
  f.tensors.emplace_back("weights", t);
  std::stringstream ss;
  container::save(ss, f);
  CHECK_THROWS_WITH(
      container::load(ss, /*require_finite=*/true),
      Catch::Matchers::ContainsSubstring("weights") &&
          Catch::Matchers::ContainsSubstring("1"));

  std::stringstream again;
  container::save(again, f);
  container::File ok = container::load(again, /*require_finite=*/false);
  CHECK(std::isnan(ok.tensors[0].second[1]));
}
