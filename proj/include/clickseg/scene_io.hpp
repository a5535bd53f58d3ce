// SPDX-License-Identifier: Apache-2.0
//
// JSON documents for scenes, click sets and segmentation results, plus an
// ASCII PLY importer. Doubles are written with round-trip precision.
#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "clickseg/types.hpp"

namespace clickseg {

using json = nlohmann::json;

json scene_to_json(const SceneData& scene);
SceneData scene_from_json(const json& doc);  // throws Error on malformed input

json clicks_to_json(const ClickSet& clicks);
ClickSet clicks_from_json(const json& doc);

json result_to_json(const SegmentationResult& result);
SegmentationResult result_from_json(const json& doc);

SceneData load_scene(const std::filesystem::path& path);
void save_scene(const SceneData& scene, const std::filesystem::path& path);
ClickSet load_clicks(const std::filesystem::path& path);
void save_clicks(const ClickSet& clicks, const std::filesystem::path& path);

/// ASCII PLY with a `vertex` element carrying x, y, z and optional
/// red, green, blue (0-255 integers or 0-1 floats).
SceneData read_ascii_ply(const std::filesystem::path& path);
SceneData parse_ascii_ply(const std::string& text);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const json& doc, const std::filesystem::path& path);

}  // namespace clickseg
