#include "poseforge/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pf::io {

namespace {

using nlohmann::json;

std::ifstream open_in(const std::filesystem::path& path, bool binary = false) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw DataError("cannot open for reading: " + path.string());
  return f;
}

std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  return f;
}

// skips comment lines in PNM headers
void pnm_header(std::ifstream& f, const std::string& magic_expect, int* w, int* h, int* maxval) {
  std::string magic;
  f >> magic;
  if (magic != magic_expect) throw DataError("unexpected PNM magic: " + magic);
  auto next_token = [&]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return tok;
    }
    throw DataError("truncated PNM header");
  };
  *w = std::stoi(next_token());
  *h = std::stoi(next_token());
  *maxval = std::stoi(next_token());
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  auto f = open_out(path);
  f << "P3\n" << img.width() << " " << img.height() << "\n255\n";
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const Rgb8& p = img.at(x, y);
      f << int(p.r) << ' ' << int(p.g) << ' ' << int(p.b) << (x + 1 == img.width() ? '\n' : ' ');
    }
  }
}

RgbImage read_ppm(const std::filesystem::path& path) {
  auto f = open_in(path);
  int w, h, maxval;
  pnm_header(f, "P3", &w, &h, &maxval);
  RgbImage img(w, h);
  for (auto& px : img.data()) {
    int r, g, b;
    if (!(f >> r >> g >> b)) throw DataError("truncated PPM data: " + path.string());
    px = {static_cast<uint8_t>(r), static_cast<uint8_t>(g), static_cast<uint8_t>(b)};
  }
  return img;
}

void write_pgm16(const std::filesystem::path& path, const DepthImage& img) {
  auto f = open_out(path);
  f << "P2\n" << img.width() << " " << img.height() << "\n65535\n";
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      f << img.at(x, y) << (x + 1 == img.width() ? '\n' : ' ');
}

DepthImage read_pgm16(const std::filesystem::path& path) {
  auto f = open_in(path);
  int w, h, maxval;
  pnm_header(f, "P2", &w, &h, &maxval);
  DepthImage img(w, h);
  for (auto& px : img.data()) {
    int v;
    if (!(f >> v)) throw DataError("truncated PGM data: " + path.string());
    px = static_cast<uint16_t>(v);
  }
  return img;
}

void write_pgm8(const std::filesystem::path& path, const MaskImage& img) {
  auto f = open_out(path);
  f << "P2\n" << img.width() << " " << img.height() << "\n255\n";
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      f << int(img.at(x, y)) << (x + 1 == img.width() ? '\n' : ' ');
}

MaskImage read_pgm8(const std::filesystem::path& path) {
  auto f = open_in(path);
  int w, h, maxval;
  pnm_header(f, "P2", &w, &h, &maxval);
  MaskImage img(w, h);
  for (auto& px : img.data()) {
    int v;
    if (!(f >> v)) throw DataError("truncated PGM data: " + path.string());
    px = static_cast<uint8_t>(v);
  }
  return img;
}

void write_pose(const std::filesystem::path& path, const Se3Pose& pose) {
  auto f = open_out(path);
  Mat4 m = pose.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) f << fmt_double(m(r, c)) << (c == 3 ? '\n' : ' ');
  }
}

Se3Pose read_pose(const std::filesystem::path& path) {
  auto f = open_in(path);
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (!(f >> m(r, c))) throw DataError("truncated pose file: " + path.string());
  return Se3Pose::from_matrix(m);
}

void write_mesh_ply(const std::filesystem::path& path, const synth::TexturedMesh& mesh) {
  auto f = open_out(path);
  f << "ply\nformat ascii 1.0\ncomment poseforge textured mesh\n";
  f << "element vertex " << mesh.vertices.size() << "\n";
  f << "property double x\nproperty double y\nproperty double z\n";
  f << "property double nx\nproperty double ny\nproperty double nz\n";
  f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "element face " << mesh.triangles.size() << "\n";
  f << "property list uchar int vertex_indices\nend_header\n";
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    const Vec3& n = mesh.vertex_normals[i];
    const Rgb8& c = mesh.vertex_colors[i];
    f << fmt_double(v.x()) << ' ' << fmt_double(v.y()) << ' ' << fmt_double(v.z()) << ' '
      << fmt_double(n.x()) << ' ' << fmt_double(n.y()) << ' ' << fmt_double(n.z()) << ' '
      << int(c.r) << ' ' << int(c.g) << ' ' << int(c.b) << '\n';
  }
  for (const auto& t : mesh.triangles) f << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

synth::TexturedMesh read_mesh_ply(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::string line;
  std::getline(f, line);
  if (line != "ply") throw DataError("not a PLY file: " + path.string());

  size_t vertex_count = 0, face_count = 0;
  std::vector<std::string> vertex_props;
  std::string current_element;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "end_header") break;
    if (tok == "comment" || tok == "format") continue;
    if (tok == "element") {
      std::string name;
      size_t count;
      ss >> name >> count;
      current_element = name;
      if (name == "vertex") vertex_count = count;
      else if (name == "face") face_count = count;
    } else if (tok == "property" && current_element == "vertex") {
      std::string type, name;
      ss >> type;
      if (type == "list") continue;
      ss >> name;
      vertex_props.push_back(name);
    }
  }
  if (vertex_count == 0) throw DataError("PLY without vertices: " + path.string());

  auto index_of = [&](const std::string& name) -> int {
    auto it = std::find(vertex_props.begin(), vertex_props.end(), name);
    return it == vertex_props.end() ? -1 : static_cast<int>(it - vertex_props.begin());
  };
  int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  int inx = index_of("nx"), iny = index_of("ny"), inz = index_of("nz");
  int ir = index_of("red"), ig = index_of("green"), ib = index_of("blue");
  if (ix < 0 || iy < 0 || iz < 0) throw DataError("PLY missing positions: " + path.string());
  if (ir < 0 || ig < 0 || ib < 0)
    throw DataError("PLY missing per-vertex colors: " + path.string());

  synth::TexturedMesh mesh;
  std::vector<double> row(vertex_props.size());
  for (size_t i = 0; i < vertex_count; ++i) {
    for (auto& v : row)
      if (!(f >> v)) throw DataError("truncated PLY vertices: " + path.string());
    mesh.vertices.emplace_back(row[ix], row[iy], row[iz]);
    if (inx >= 0) mesh.vertex_normals.emplace_back(row[inx], row[iny], row[inz]);
    mesh.vertex_colors.push_back({static_cast<uint8_t>(row[ir]), static_cast<uint8_t>(row[ig]),
                                  static_cast<uint8_t>(row[ib])});
  }
  for (size_t i = 0; i < face_count; ++i) {
    int n;
    if (!(f >> n)) throw DataError("truncated PLY faces: " + path.string());
    std::vector<int> idx(n);
    for (int& v : idx) f >> v;
    for (int v : idx)
      if (v < 0 || v >= static_cast<int>(mesh.vertices.size()))
        throw DataError("PLY face index out of range: " + path.string());
    for (int j = 2; j < n; ++j) mesh.triangles.push_back({idx[0], idx[j - 1], idx[j]});
  }

  if (mesh.vertex_normals.empty()) {
    // area-weighted face normals
    mesh.vertex_normals.assign(mesh.vertices.size(), Vec3::Zero());
    for (const auto& t : mesh.triangles) {
      Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                   .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
      for (int v : {t[0], t[1], t[2]}) mesh.vertex_normals[v] += n;
    }
    for (auto& n : mesh.vertex_normals) {
      double nn = n.norm();
      n = nn > 1e-12 ? Vec3(n / nn) : Vec3(0, 0, 1);
    }
  }

  double d2 = 0.0;
  for (size_t a = 0; a < mesh.vertices.size(); ++a)
    for (size_t b = a + 1; b < mesh.vertices.size(); ++b)
      d2 = std::max(d2, (mesh.vertices[a] - mesh.vertices[b]).squaredNorm());
  mesh.diameter = std::sqrt(d2);
  return mesh;
}

void write_cloud_ply(const std::filesystem::path& path, const reg::ClassifiedCloud& cloud) {
  auto f = open_out(path);
  const bool normals = cloud.has_normals();
  f << "ply\nformat ascii 1.0\ncomment poseforge classified cloud\n";
  f << "element vertex " << cloud.size() << "\n";
  f << "property double x\nproperty double y\nproperty double z\n";
  if (normals) f << "property double nx\nproperty double ny\nproperty double nz\n";
  f << "property int class_id\nproperty double weight\nend_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    f << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z());
    if (normals) {
      const Vec3& n = cloud.normals[i];
      f << ' ' << fmt_double(n.x()) << ' ' << fmt_double(n.y()) << ' ' << fmt_double(n.z());
    }
    f << ' ' << cloud.class_ids[i] << ' ' << fmt_double(cloud.weights[i]) << '\n';
  }
}

reg::ClassifiedCloud read_cloud_ply(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::string line;
  std::getline(f, line);
  if (line != "ply") throw DataError("not a PLY file: " + path.string());
  size_t vertex_count = 0;
  bool has_normals = false;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "end_header") break;
    if (tok == "element") {
      std::string name;
      ss >> name >> vertex_count;
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      if (name == "nx") has_normals = true;
    }
  }
  reg::ClassifiedCloud cloud;
  for (size_t i = 0; i < vertex_count; ++i) {
    double x, y, z, w;
    int cls;
    if (!(f >> x >> y >> z)) throw DataError("truncated cloud PLY: " + path.string());
    if (has_normals) {
      double nx, ny, nz;
      f >> nx >> ny >> nz;
      cloud.normals.emplace_back(nx, ny, nz);
    }
    if (!(f >> cls >> w)) throw DataError("truncated cloud PLY: " + path.string());
    cloud.points.emplace_back(x, y, z);
    cloud.class_ids.push_back(cls);
    cloud.weights.push_back(w);
  }
  return cloud;
}

void write_class_db(const std::filesystem::path& path, const colorpair::ClassDb& db) {
  json j;
  j["version"] = 1;
  j["lightness_weight"] = db.lightness_weight;
  j["threshold"] = db.similarity_threshold;
  j["classes"] = json::array();
  for (const auto& cls : db.classes) {
    json jc;
    jc["id"] = cls.id;
    jc["prototypes"] = json::array();
    for (const auto& p : cls.prototypes) {
      jc["prototypes"].push_back({{"c1", {p.c1.x(), p.c1.y(), p.c1.z()}},
                                  {"c2", {p.c2.x(), p.c2.y(), p.c2.z()}}});
    }
    j["classes"].push_back(jc);
  }
  auto f = open_out(path);
  f << j.dump(2) << "\n";
}

colorpair::ClassDb read_class_db(const std::filesystem::path& path) {
  auto f = open_in(path);
  json j;
  f >> j;
  if (j.value("version", 0) != 1) throw DataError("unsupported class db version");
  colorpair::ClassDb db;
  db.lightness_weight = j.at("lightness_weight").get<double>();
  db.similarity_threshold = j.at("threshold").get<double>();
  for (const auto& jc : j.at("classes")) {
    colorpair::ClassDb::ClassEntry entry;
    entry.id = jc.at("id").get<int>();
    for (const auto& jp : jc.at("prototypes")) {
      colorpair::ColorPair p;
      auto c1 = jp.at("c1");
      auto c2 = jp.at("c2");
      p.c1 = Vec3(c1[0].get<double>(), c1[1].get<double>(), c1[2].get<double>());
      p.c2 = Vec3(c2[0].get<double>(), c2[1].get<double>(), c2[2].get<double>());
      entry.prototypes.push_back(p);
    }
    db.classes.push_back(std::move(entry));
  }
  return db;
}

namespace {

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw DataError("truncated hash db");
  return v;
}

void put_vec(std::ofstream& f, const Vec3& v) {
  put(f, v.x());
  put(f, v.y());
  put(f, v.z());
}

Vec3 get_vec(std::ifstream& f) {
  double x = get<double>(f), y = get<double>(f), z = get<double>(f);
  return {x, y, z};
}

}  // namespace

void write_hash_db(const std::filesystem::path& path, const reg::TriangleHashDb& db) {
  auto f = open_out(path, true);
  f.write("TRIHASH1", 8);
  put<uint32_t>(f, 1);
  put(f, db.steps.length_step);
  put(f, db.steps.area_step);
  put(f, db.quality_threshold);

  std::vector<reg::TriangleKey> keys;
  keys.reserve(db.triangles.size());
  for (const auto& [k, v] : db.triangles) keys.push_back(k);
  std::sort(keys.begin(), keys.end(),
            [](const reg::TriangleKey& a, const reg::TriangleKey& b) { return a.v < b.v; });
  put<uint64_t>(f, keys.size());
  for (const auto& k : keys) {
    for (int64_t v : k.v) put(f, v);
    const auto& triples = db.triangles.at(k);
    put<uint64_t>(f, triples.size());
    for (const auto& t : triples)
      for (const auto& vert : t.vertices) put_vec(f, vert);
  }

  put(f, db.ppf_angle_step_rad);
  put(f, db.ppf_dist_step);
  std::vector<reg::PpfKey> pkeys;
  pkeys.reserve(db.ppf_templates.size());
  for (const auto& [k, v] : db.ppf_templates) pkeys.push_back(k);
  std::sort(pkeys.begin(), pkeys.end(),
            [](const reg::PpfKey& a, const reg::PpfKey& b) { return a.v < b.v; });
  put<uint64_t>(f, pkeys.size());
  for (const auto& k : pkeys) {
    for (int64_t v : k.v) put(f, v);
    const auto& entries = db.ppf_templates.at(k);
    put<uint64_t>(f, entries.size());
    for (const auto& e : entries) {
      put_vec(f, e.p1);
      put_vec(f, e.n1);
      put_vec(f, e.p2);
      put_vec(f, e.n2);
    }
  }
}

reg::TriangleHashDb read_hash_db(const std::filesystem::path& path) {
  auto f = open_in(path, true);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "TRIHASH1", 8) != 0)
    throw DataError("bad hash db magic: " + path.string());
  if (get<uint32_t>(f) != 1) throw DataError("unsupported hash db version");

  reg::TriangleHashDb db;
  db.steps.length_step = get<double>(f);
  db.steps.area_step = get<double>(f);
  db.quality_threshold = get<double>(f);

  uint64_t key_count = get<uint64_t>(f);
  for (uint64_t i = 0; i < key_count; ++i) {
    reg::TriangleKey k;
    for (auto& v : k.v) v = get<int64_t>(f);
    uint64_t triple_count = get<uint64_t>(f);
    auto& list = db.triangles[k];
    for (uint64_t t = 0; t < triple_count; ++t) {
      reg::ModelTriple triple;
      for (auto& vert : triple.vertices) vert = get_vec(f);
      list.push_back(triple);
    }
  }

  db.ppf_angle_step_rad = get<double>(f);
  db.ppf_dist_step = get<double>(f);
  uint64_t ppf_count = get<uint64_t>(f);
  for (uint64_t i = 0; i < ppf_count; ++i) {
    reg::PpfKey k;
    for (auto& v : k.v) v = get<int64_t>(f);
    uint64_t entry_count = get<uint64_t>(f);
    auto& list = db.ppf_templates[k];
    for (uint64_t e = 0; e < entry_count; ++e) {
      reg::PpfEntry entry;
      entry.p1 = get_vec(f);
      entry.n1 = get_vec(f);
      entry.p2 = get_vec(f);
      entry.n2 = get_vec(f);
      list.push_back(entry);
    }
  }
  return db;
}

void write_flo2(const std::filesystem::path& path, const track::FlowField& field) {
  auto f = open_out(path, true);
  f.write("FLO2", 4);
  put<uint32_t>(f, static_cast<uint32_t>(field.width()));
  put<uint32_t>(f, static_cast<uint32_t>(field.height()));
  for (const auto& v : field.data()) {
    float dx = v.x(), dy = v.y();
    f.write(reinterpret_cast<const char*>(&dx), 4);
    f.write(reinterpret_cast<const char*>(&dy), 4);
  }
}

track::FlowField read_flo2(const std::filesystem::path& path) {
  auto f = open_in(path, true);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "FLO2", 4) != 0)
    throw DataError("bad flow file magic: " + path.string());
  uint32_t w = get<uint32_t>(f), h = get<uint32_t>(f);
  track::FlowField field(static_cast<int>(w), static_cast<int>(h));
  for (auto& v : field.data()) {
    float dx, dy;
    f.read(reinterpret_cast<char*>(&dx), 4);
    f.read(reinterpret_cast<char*>(&dy), 4);
    if (!f) throw DataError("truncated flow file: " + path.string());
    v = {dx, dy};
  }
  return field;
}

void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k) {
  json j{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
         {"width", k.width}, {"height", k.height}};
  auto f = open_out(path);
  f << j.dump(2) << "\n";
}

CameraIntrinsics read_intrinsics(const std::filesystem::path& path) {
  auto f = open_in(path);
  json j;
  f >> j;
  CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

void write_eval_csv(const std::filesystem::path& path,
                    const std::vector<metrics::PoseErrorRecord>& records) {
  auto f = open_out(path);
  f << "frame,add,adds,rot_err,trans_err\n";
  for (const auto& r : records)
    f << r.frame << ',' << fmt_double(r.add) << ',' << fmt_double(r.adds) << ','
      << fmt_double(r.rotation_err_deg) << ',' << fmt_double(r.translation_err) << '\n';
}

void write_eval_summary_json(const std::filesystem::path& path, const metrics::EvalSummary& s) {
  json j{{"recall", s.recall},
         {"recall_adds", s.recall_adds},
         {"auc", s.auc},
         {"auc_adds", s.auc_adds},
         {"mean_add", s.mean_add},
         {"mean_adds", s.mean_adds},
         {"mean_rotation_err_deg", s.mean_rotation_err_deg},
         {"mean_translation_err", s.mean_translation_err},
         {"frames", s.frames}};
  auto f = open_out(path);
  f << j.dump(2) << "\n";
}

}  // namespace pf::io
