#include "support/fixtures.hpp"

#include "genie/edit_script.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace genie;
using genie::testing::random_scene;
using genie::testing::same_bits;
using genie::testing::SceneSpec;
using nlohmann::json;

namespace {

GaussianSet scene() {
  SceneSpec spec;
  spec.n = 12;
  spec.featureDim = 2;
  return random_scene(spec, 3);
}

std::string scratch() {
  const auto dir = std::filesystem::temp_directory_path() / "genie_edit_script_test";
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST(EditCommand, TranslateRotateScaleTransform) {
  const GaussianSet base = scene();
  EditContext ctx;

  GaussianSet a = base;
  apply_edit_command(a, json::parse(R"({"op":"translate","selection":{"indices":[0,3]},
                                          "params":{"offset":[1,0,-1]}})"),
                     ctx);
  EXPECT_EQ(a[0].mean, Vec3(base[0].mean + Vec3(1, 0, -1)));
  EXPECT_EQ(a[1].mean, base[1].mean);
  EXPECT_EQ(a.epoch(), base.epoch() + 1);

  GaussianSet r = base;
  apply_edit_command(r, json::parse(R"({"op":"rotate","params":{"axis":[0,0,1],"angleDeg":90}})"), ctx);
  for (std::size_t i = 0; i < base.size(); ++i) {
    const Vec3 want(-base[i].mean.y(), base[i].mean.x(), base[i].mean.z());
    EXPECT_NEAR((r[i].mean - want).norm(), 0.0, 1e-12);
  }

  GaussianSet s = base;
  apply_edit_command(s, json::parse(R"({"op":"scale","params":{"factor":3,"center":[1,1,1]}})"), ctx);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR((s[i].mean - (Vec3::Ones() + 3.0 * (base[i].mean - Vec3::Ones()))).norm(), 0.0, 1e-12);
  }

  GaussianSet t = base;
  apply_edit_command(
      t, json::parse(R"({"op":"transform","params":{"matrix":[[1,0,0,0.5],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}})"),
      ctx);
  EXPECT_EQ(t[5].mean, Vec3(base[5].mean + Vec3(0.5, 0, 0)));
}

TEST(EditCommand, SelectionForms) {
  const GaussianSet set = scene();
  EXPECT_EQ(parse_selection(json(), set).indices.size(), set.size());
  EXPECT_EQ(parse_selection("all", set).indices.size(), set.size());
  EXPECT_EQ(parse_selection(json::parse(R"({"indices":[4,1,4]})"), set).indices,
            (std::vector<std::uint32_t>{1, 4}));
  const Selection sphere =
      parse_selection(json::parse(R"({"sphere":{"center":[0,0,0],"radius":100}})"), set);
  EXPECT_EQ(sphere.indices.size(), set.size());
  EXPECT_TRUE(parse_selection(json::parse(R"({"box":{"min":[5,5,5],"max":[6,6,6]}})"), set).indices.empty());
}

TEST(EditCommand, SelectionErrors) {
  const GaussianSet set = scene();
  for (const char* bad : {R"({"indices":[12]})", R"({"indices":[-1]})", R"({"indices":"x"})",
                          R"({"sphere":{"center":[0,0]}})", R"({"sphere":{"center":[0,0,0],"radius":-1}})",
                          R"({"box":{"min":[0,0,0]}})", R"({"cone":{}})", R"("some")"}) {
    EXPECT_THROW(parse_selection(json::parse(bad), set), EditError) << bad;
  }
  try {
    parse_selection(json::parse(R"({"indices":[0,99]})"), set);
  } catch (const EditError& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(EditCommand, MalformedCommands) {
  GaussianSet set = scene();
  EditContext ctx;
  const std::uint64_t e0 = set.epoch();
  for (const char* bad : {R"({"params":{}})", R"({"op":"explode"})", R"({"op":"translate"})",
                          R"({"op":"translate","params":{"offset":[1,2]}})",
                          R"({"op":"translate","params":{"offset":[1,2,3]},"extra":1})",
                          R"({"op":"scale","params":{"factor":0}})",
                          R"({"op":"deform_frame","params":{"frame":0}})",
                          R"({"op":"deform_frame","params":{"frame":-2}})"}) {
    EXPECT_THROW(apply_edit_command(set, json::parse(bad), ctx), EditError) << bad;
  }
  EXPECT_EQ(set.epoch(), e0);
}

TEST(EditCommand, BindDeformAndExport) {
  GaussianSet set = scene();
  EditContext ctx;
  ctx.baseDir = scratch();
  apply_edit_command(set, json::parse(R"({"op":"export_soup","params":{"out":"soup.obj","q":1.5}})"), ctx);
  ASSERT_TRUE(std::filesystem::exists(ctx.baseDir + "/soup.obj"));
  const GaussianSet before = set;
  const EditOutcome bind = apply_edit_command(set, json::parse(R"({"op":"bind","params":{"mesh":"soup.obj"}})"), ctx);
  EXPECT_FALSE(bind.mutated);
  EXPECT_EQ(set.epoch(), before.epoch());
  const EditOutcome d = apply_edit_command(set, json::parse(R"({"op":"deform_frame","params":{"frame":0}})"), ctx);
  EXPECT_TRUE(d.mutated);
  EXPECT_EQ(set.epoch(), before.epoch() + 1);
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_NEAR((set[i].mean - before[i].mean).norm(), 0.0, 1e-12);
  try {
    apply_edit_command(set, json::parse(R"({"op":"deform_frame","params":{"frame":1}})"), ctx);
    FAIL() << "expected EditError";
  } catch (const EditError& e) {
    EXPECT_NE(std::string(e.what()).find("beyond sequence length"), std::string::npos);
  }
}

TEST(EditScript, Formats) {
  EXPECT_TRUE(parse_edit_script("[]").empty());
  EXPECT_EQ(parse_edit_script(R"([{"op":"translate","params":{"offset":[0,0,0]}}])").size(), 1u);
  EXPECT_EQ(parse_edit_script(R"({"version":1,"edits":[{"op":"a"},{"op":"b"}]})").size(), 2u);
  EXPECT_THROW(parse_edit_script(R"({"version":2,"edits":[]})"), EditError);
  EXPECT_THROW(parse_edit_script(R"({"version":1})"), EditError);
  EXPECT_THROW(parse_edit_script("{not json"), EditError);
  EXPECT_THROW(parse_edit_script("42"), EditError);
}

// Translating by t then -t restores means to rounding.
TEST(EditProperty, TranslateInverse) {
  GaussianSet set = scene();
  const GaussianSet before = set;
  EditContext ctx;
  apply_edit_command(set, json::parse(R"({"op":"translate","params":{"offset":[0.3,-0.7,1.1]}})"), ctx);
  apply_edit_command(set, json::parse(R"({"op":"translate","params":{"offset":[-0.3,0.7,-1.1]}})"), ctx);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_NEAR((set[i].mean - before[i].mean).norm(), 0.0, 1e-15);
    EXPECT_TRUE(same_bits(std::span<const double>(set[i].logScale.data(), 3),
                          std::span<const double>(before[i].logScale.data(), 3)));
  }
}
