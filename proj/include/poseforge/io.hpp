#pragma once

#include "poseforge/colorpair.hpp"
#include "poseforge/core.hpp"
#include "poseforge/metrics.hpp"
#include "poseforge/registration.hpp"
#include "poseforge/synth.hpp"
#include "poseforge/tracking.hpp"

#include <filesystem>
#include <string>

namespace pf::io {

// ASCII image formats (P3 / P2); depth uses 16-bit PGM in millimeters.
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);
void write_pgm16(const std::filesystem::path& path, const DepthImage& img);
DepthImage read_pgm16(const std::filesystem::path& path);
void write_pgm8(const std::filesystem::path& path, const MaskImage& img);
MaskImage read_pgm8(const std::filesystem::path& path);

// 4x4 row-major pose text, full double precision.
void write_pose(const std::filesystem::path& path, const Se3Pose& pose);
Se3Pose read_pose(const std::filesystem::path& path);

// ASCII PLY with per-vertex color and normals.
void write_mesh_ply(const std::filesystem::path& path, const synth::TexturedMesh& mesh);
synth::TexturedMesh read_mesh_ply(const std::filesystem::path& path);

// Classified model cloud as ASCII PLY with class/weight properties.
void write_cloud_ply(const std::filesystem::path& path, const reg::ClassifiedCloud& cloud);
reg::ClassifiedCloud read_cloud_ply(const std::filesystem::path& path);

// Versioned JSON schema: version, lightness_weight, threshold,
// classes[{id, prototypes[{c1, c2}]}].
void write_class_db(const std::filesystem::path& path, const colorpair::ClassDb& db);
colorpair::ClassDb read_class_db(const std::filesystem::path& path);

// TRIHASH1 little-endian binary with the PPF table appended.
void write_hash_db(const std::filesystem::path& path, const reg::TriangleHashDb& db);
reg::TriangleHashDb read_hash_db(const std::filesystem::path& path);

// "FLO2" little-endian dense flow raster.
void write_flo2(const std::filesystem::path& path, const track::FlowField& field);
track::FlowField read_flo2(const std::filesystem::path& path);

void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k);
CameraIntrinsics read_intrinsics(const std::filesystem::path& path);

void write_eval_csv(const std::filesystem::path& path,
                    const std::vector<metrics::PoseErrorRecord>& records);
void write_eval_summary_json(const std::filesystem::path& path, const metrics::EvalSummary& s);

}  // namespace pf::io
