#include "poseforge/cli.hpp"
#include "poseforge/config.hpp"
#include "poseforge/io.hpp"
#include "poseforge/pipeline.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace pf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("poseforge_test_" + std::to_string(Rng(std::random_device{}()).next()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("pnm images round-trip") {
  TempDir tmp;
  Rng rng(10);

  RgbImage rgb(17, 9);
  for (auto& px : rgb.data())
    px = {static_cast<uint8_t>(rng.uniform_int(0, 255)),
          static_cast<uint8_t>(rng.uniform_int(0, 255)),
          static_cast<uint8_t>(rng.uniform_int(0, 255))};
  io::write_ppm(tmp.path / "t.ppm", rgb);
  RgbImage rgb2 = io::read_ppm(tmp.path / "t.ppm");
  CHECK(rgb2.data() == rgb.data());

  DepthImage depth(13, 7);
  for (auto& d : depth.data()) d = static_cast<uint16_t>(rng.uniform_int(0, 65535));
  io::write_pgm16(tmp.path / "t.pgm", depth);
  CHECK(io::read_pgm16(tmp.path / "t.pgm").data() == depth.data());

  MaskImage mask(11, 5);
  for (auto& m : mask.data()) m = rng.uniform() < 0.5 ? 0 : 255;
  io::write_pgm8(tmp.path / "m.pgm", mask);
  CHECK(io::read_pgm8(tmp.path / "m.pgm").data() == mask.data());

  CHECK_THROWS_AS(io::read_ppm(tmp.path / "missing.ppm"), DataError);
}

TEST_CASE("pose text round-trips bit-exactly") {
  TempDir tmp;
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    Se3Pose pose{rng.random_rotation(), Vec3(rng.normal(), rng.normal(), rng.normal())};
    io::write_pose(tmp.path / "p.txt", pose);
    Se3Pose back = io::read_pose(tmp.path / "p.txt");
    CHECK(back.rotation == pose.rotation);
    CHECK(back.translation == pose.translation);
  }
}

TEST_CASE("mesh ply round-trips") {
  TempDir tmp;
  synth::TexturedMesh mesh = synth::generate_shape(12);
  io::write_mesh_ply(tmp.path / "m.ply", mesh);
  synth::TexturedMesh back = io::read_mesh_ply(tmp.path / "m.ply");

  REQUIRE(back.vertices.size() == mesh.vertices.size());
  REQUIRE(back.triangles.size() == mesh.triangles.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    CHECK(back.vertices[i] == mesh.vertices[i]);
    CHECK(back.vertex_normals[i] == mesh.vertex_normals[i]);
    CHECK(back.vertex_colors[i] == mesh.vertex_colors[i]);
  }
  CHECK(back.triangles == mesh.triangles);
  CHECK(back.diameter == doctest::Approx(mesh.diameter).epsilon(1e-12));

  // writing the reread mesh reproduces identical bytes
  io::write_mesh_ply(tmp.path / "m2.ply", back);
  CHECK(slurp(tmp.path / "m.ply") == slurp(tmp.path / "m2.ply"));
}

TEST_CASE("classified cloud ply round-trips") {
  TempDir tmp;
  Rng rng(13);
  reg::ClassifiedCloud cloud;
  for (int i = 0; i < 50; ++i) {
    cloud.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
    cloud.class_ids.push_back(rng.uniform_int(-1, 5));
    cloud.weights.push_back(cloud.class_ids.back() < 0 ? 0.0 : rng.uniform());
    cloud.normals.push_back(rng.unit_vector());
  }
  io::write_cloud_ply(tmp.path / "c.ply", cloud);
  reg::ClassifiedCloud back = io::read_cloud_ply(tmp.path / "c.ply");
  REQUIRE(back.size() == cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back.points[i] == cloud.points[i]);
    CHECK(back.normals[i] == cloud.normals[i]);
    CHECK(back.class_ids[i] == cloud.class_ids[i]);
    CHECK(back.weights[i] == cloud.weights[i]);
  }
}

TEST_CASE("class db json round-trips") {
  TempDir tmp;
  Rng rng(14);
  std::vector<colorpair::ColorPair> pairs;
  for (int i = 0; i < 12; ++i) {
    colorpair::ColorPair p;
    p.c1 = Vec3(rng.uniform(5, 95), rng.uniform(-60, 60), rng.uniform(-60, 60));
    p.c2 = Vec3(rng.uniform(5, 95), rng.uniform(-60, 60), rng.uniform(-60, 60));
    pairs.push_back(p);
  }
  colorpair::ClassDb db = colorpair::build_class_db(pairs, 0.85, 0.3);
  io::write_class_db(tmp.path / "db.json", db);
  colorpair::ClassDb back = io::read_class_db(tmp.path / "db.json");

  CHECK(back.similarity_threshold == db.similarity_threshold);
  CHECK(back.lightness_weight == db.lightness_weight);
  REQUIRE(back.classes.size() == db.classes.size());
  for (size_t i = 0; i < db.classes.size(); ++i) {
    CHECK(back.classes[i].id == db.classes[i].id);
    REQUIRE(back.classes[i].prototypes.size() == db.classes[i].prototypes.size());
    for (size_t j = 0; j < db.classes[i].prototypes.size(); ++j) {
      CHECK(back.classes[i].prototypes[j].c1 == db.classes[i].prototypes[j].c1);
      CHECK(back.classes[i].prototypes[j].c2 == db.classes[i].prototypes[j].c2);
    }
  }
}

TEST_CASE("hash db binary round-trips with identical lookups") {
  TempDir tmp;
  Rng rng(15);
  reg::ClassifiedCloud model;
  for (int i = 0; i < 150; ++i) {
    model.points.emplace_back(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                              rng.uniform(-0.05, 0.05));
    model.class_ids.push_back(rng.uniform_int(0, 4));
    model.weights.push_back(1.0);
    model.normals.push_back(rng.unit_vector());
  }
  reg::TriangleHashDb db = reg::build_hash_db(model);
  io::write_hash_db(tmp.path / "t.bin", db);
  reg::TriangleHashDb back = io::read_hash_db(tmp.path / "t.bin");

  CHECK(back.steps.length_step == db.steps.length_step);
  REQUIRE(back.triangles.size() == db.triangles.size());
  for (const auto& [key, triples] : db.triangles) {
    auto it = back.triangles.find(key);
    REQUIRE(it != back.triangles.end());
    REQUIRE(it->second.size() == triples.size());
    for (size_t i = 0; i < triples.size(); ++i)
      for (int v = 0; v < 3; ++v) CHECK(it->second[i].vertices[v] == triples[i].vertices[v]);
  }
  REQUIRE(back.ppf_templates.size() == db.ppf_templates.size());

  // writing again yields identical bytes
  io::write_hash_db(tmp.path / "t2.bin", back);
  CHECK(slurp(tmp.path / "t.bin") == slurp(tmp.path / "t2.bin"));
}

TEST_CASE("flo2 round-trips") {
  TempDir tmp;
  Rng rng(16);
  track::FlowField field(9, 6);
  for (auto& v : field.data())
    v = {static_cast<float>(rng.normal()), static_cast<float>(rng.normal())};
  io::write_flo2(tmp.path / "f.flo2", field);
  track::FlowField back = io::read_flo2(tmp.path / "f.flo2");
  REQUIRE(back.width() == field.width());
  CHECK(back.data() == field.data());
}

TEST_CASE("config loads, validates, overrides and saves") {
  TempDir tmp;
  PipelineConfig cfg;
  cfg.seed = 5;
  cfg.lightness_weight = 0.4;
  cfg.save(tmp.path / "c.json");

  PipelineConfig back = PipelineConfig::load(tmp.path / "c.json");
  CHECK(back.seed == 5);
  CHECK(back.lightness_weight == 0.4);

  back.apply_key("hough.top_k", "7");
  CHECK(back.top_k == 7);
  CHECK_THROWS_AS(back.apply_key("no.such.key", "1"), DataError);

  // unknown keys in files are rejected
  std::ofstream bad(tmp.path / "bad.json");
  bad << "{\"definitely_not_a_key\": 1}";
  bad.close();
  PipelineConfig fresh;
  CHECK_THROWS_AS(fresh.apply_file(tmp.path / "bad.json"), DataError);

  // invalid values are rejected
  std::ofstream inv(tmp.path / "inv.json");
  inv << "{\"colorpair.lightness_weight\": -1.0}";
  inv.close();
  CHECK_THROWS_AS(fresh.apply_file(tmp.path / "inv.json"), DataError);

  // round-trip: saving the loaded config reproduces the bytes
  back.save(tmp.path / "c2.json");
  PipelineConfig again = PipelineConfig::load(tmp.path / "c2.json");
  again.save(tmp.path / "c3.json");
  CHECK(slurp(tmp.path / "c2.json") == slurp(tmp.path / "c3.json"));
}

TEST_CASE("cli synth shape is deterministic and build-db reports classes") {
  TempDir tmp;
  auto run = [&](std::vector<std::string> args) { return cli::run(args); };

  CHECK(run({"synth", "shape", "--seed", "7", "--out", (tmp.path / "s1").string()}) == 0);
  CHECK(run({"synth", "shape", "--seed", "7", "--out", (tmp.path / "s2").string()}) == 0);
  CHECK(slurp(tmp.path / "s1/shape.ply") == slurp(tmp.path / "s2/shape.ply"));

  CHECK(run({"build-db", "--mesh", (tmp.path / "s1/shape.ply").string(), "--out",
             (tmp.path / "db").string()}) == 0);
  CHECK(fs::exists(tmp.path / "db/classdb.json"));
  CHECK(fs::exists(tmp.path / "db/trihash.bin"));
  CHECK(fs::exists(tmp.path / "db/model_cloud.ply"));

  colorpair::ClassDb db = io::read_class_db(tmp.path / "db/classdb.json");
  CHECK(db.classes.size() >= 3);
}

TEST_CASE("cli errors use the documented exit codes") {
  TempDir tmp;
  // usage error
  CHECK(cli::run({"estimate"}) == 1);
  CHECK(cli::run({"no-such-command"}) == 1);
  // data error: unreadable mesh
  CHECK(cli::run({"build-db", "--mesh", (tmp.path / "missing.ply").string(), "--out",
                  (tmp.path / "db").string()}) == 2);
}

TEST_CASE("single-color meshes produce a ppf-only database and exit 2") {
  TempDir tmp;
  synth::TexturedMesh mesh = synth::generate_shape(3);
  for (auto& c : mesh.vertex_colors) c = {180, 40, 40};
  io::write_mesh_ply(tmp.path / "plain.ply", mesh);

  int code = cli::run({"build-db", "--mesh", (tmp.path / "plain.ply").string(), "--out",
                       (tmp.path / "db").string()});
  CHECK(code == 2);
  CHECK(fs::exists(tmp.path / "db/trihash.bin"));
  reg::TriangleHashDb db = io::read_hash_db(tmp.path / "db/trihash.bin");
  CHECK(db.triangles.empty());
  CHECK(!db.ppf_templates.empty());
}
