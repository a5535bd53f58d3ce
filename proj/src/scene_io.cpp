// SPDX-License-Identifier: Apache-2.0

#include "clickseg/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace clickseg {

void SceneData::validate() const {
  cloud.validate();
  if (!instance_ids.empty() && instance_ids.size() != cloud.size())
    throw Error("instance_ids length does not match point count");
  if (!class_ids.empty() && class_ids.size() != cloud.size())
    throw Error("class_ids length does not match point count");
  if (!class_ids.empty() && instance_ids.empty())
    throw Error("class_ids given without instance_ids");
}

std::vector<int> ClickSet::distinct_groups() const {
  std::set<int> g;
  for (const auto& c : clicks) g.insert(c.group);
  return {g.begin(), g.end()};
}

namespace {

Vec3 parse_vec3(const json& v, const char* field) {
  if (!v.is_array() || v.size() != 3) throw Error(std::string("each entry of '") + field +
                                                  "' must be an array of 3 numbers");
  Vec3 p;
  for (int a = 0; a < 3; ++a) {
    if (!v[a].is_number()) throw Error(std::string("non-numeric entry in '") + field + "'");
    p[a] = v[a].get<double>();
  }
  return p;
}

std::vector<int> parse_int_array(const json& doc, const char* field) {
  const auto& arr = doc.at(field);
  if (!arr.is_array()) throw Error(std::string("'") + field + "' must be an array");
  std::vector<int> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer()) throw Error(std::string("'") + field + "' must hold integers");
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace

json scene_to_json(const SceneData& scene) {
  json doc;
  if (!scene.cloud.id.empty()) doc["id"] = scene.cloud.id;
  json pts = json::array();
  for (const auto& p : scene.cloud.positions) pts.push_back({p[0], p[1], p[2]});
  doc["points"] = std::move(pts);
  if (scene.cloud.has_attributes()) {
    if (scene.cloud.attributes.cols() != 3) throw Error("only RGB attributes are serializable");
    json cols = json::array();
    for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
      auto r = scene.cloud.attributes.row(i);
      cols.push_back({r[0], r[1], r[2]});
    }
    doc["colors"] = std::move(cols);
  }
  if (!scene.instance_ids.empty()) doc["instance_ids"] = scene.instance_ids;
  if (!scene.class_ids.empty()) doc["class_ids"] = scene.class_ids;
  return doc;
}

SceneData scene_from_json(const json& doc) {
  if (!doc.is_object()) throw Error("scene document must be an object");
  if (!doc.contains("points")) throw Error("scene document is missing 'points'");
  const auto& pts = doc["points"];
  if (!pts.is_array() || pts.empty()) throw Error("'points' must be a non-empty array");
  SceneData s;
  if (doc.contains("id")) s.cloud.id = doc["id"].get<std::string>();
  s.cloud.positions.reserve(pts.size());
  for (const auto& p : pts) s.cloud.positions.push_back(parse_vec3(p, "points"));
  if (doc.contains("colors")) {
    const auto& cols = doc["colors"];
    if (!cols.is_array() || cols.size() != pts.size())
      throw Error("'colors' must align with 'points'");
    s.cloud.attributes = Tensor<double>(pts.size(), 3);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const Vec3 c = parse_vec3(cols[i], "colors");
      for (int a = 0; a < 3; ++a) {
        if (c[a] < 0 || c[a] > 1) throw Error("'colors' entries must lie in [0, 1]");
        s.cloud.attributes(i, a) = c[a];
      }
    }
  }
  if (doc.contains("instance_ids")) s.instance_ids = parse_int_array(doc, "instance_ids");
  if (doc.contains("class_ids")) s.class_ids = parse_int_array(doc, "class_ids");
  s.validate();
  return s;
}

json clicks_to_json(const ClickSet& clicks) {
  json arr = json::array();
  for (const auto& c : clicks.clicks) {
    json e{{"x", c.position[0]}, {"y", c.position[1]}, {"z", c.position[2]}, {"group", c.group}};
    if (c.source_instance >= 0) e["instance"] = c.source_instance;
    if (c.point_index >= 0) e["point"] = c.point_index;
    arr.push_back(std::move(e));
  }
  return json{{"clicks", std::move(arr)}};
}

ClickSet clicks_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("clicks") || !doc["clicks"].is_array())
    throw Error("click document must hold a 'clicks' array");
  ClickSet out;
  for (const auto& e : doc["clicks"]) {
    if (!e.is_object()) throw Error("each click must be an object");
    Click c;
    for (int a = 0; a < 3; ++a) {
      const char* key = a == 0 ? "x" : a == 1 ? "y" : "z";
      if (!e.contains(key) || !e[key].is_number()) throw Error("click is missing coordinates");
      c.position[a] = e[key].get<double>();
      if (!std::isfinite(c.position[a])) throw Error("click coordinates must be finite");
    }
    c.group = e.value("group", 0);
    c.source_instance = e.value("instance", -1);
    c.point_index = e.value("point", -1);
    out.clicks.push_back(c);
  }
  return out;
}

json result_to_json(const SegmentationResult& r) {
  json groups = json::array();
  for (std::size_t g = 0; g < r.groups.size(); ++g)
    groups.push_back({{"id", r.groups[g]},
                      {"class", r.group_class.at(g)},
                      {"confidence", r.group_confidence.at(g)}});
  return json{{"point_instance", r.point_instance},
              {"point_class", r.point_class},
              {"groups", std::move(groups)}};
}

SegmentationResult result_from_json(const json& doc) {
  SegmentationResult r;
  r.point_instance = parse_int_array(doc, "point_instance");
  r.point_class = parse_int_array(doc, "point_class");
  for (const auto& g : doc.at("groups")) {
    r.groups.push_back(g.at("id").get<int>());
    r.group_class.push_back(g.at("class").get<int>());
    r.group_confidence.push_back(g.at("confidence").get<double>());
  }
  return r;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const json& doc, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump() << '\n';
}

SceneData load_scene(const std::filesystem::path& path) {
  try {
    return scene_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw Error("malformed scene document " + path.string() + ": " + e.what());
  }
}

void save_scene(const SceneData& scene, const std::filesystem::path& path) {
  write_json_file(scene_to_json(scene), path);
}

ClickSet load_clicks(const std::filesystem::path& path) {
  return clicks_from_json(read_json_file(path));
}

void save_clicks(const ClickSet& clicks, const std::filesystem::path& path) {
  write_json_file(clicks_to_json(clicks), path);
}

SceneData parse_ascii_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw Error("not a PLY file");

  std::size_t vertex_count = 0;
  bool in_vertex = false;
  std::vector<std::string> vertex_props;
  std::vector<std::pair<std::string, std::size_t>> elements;  // name, count
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (tok == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      elements.emplace_back(name, count);
      in_vertex = name == "vertex";
      if (in_vertex) vertex_count = count;
    } else if (tok == "property") {
      std::string type, name;
      ls >> type;
      if (type == "list") {
        if (in_vertex) throw Error("list properties on vertex are unsupported");
        continue;  // e.g. face vertex_indices; faces are ignored
      }
      ls >> name;
      if (in_vertex) vertex_props.push_back(name);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!ascii) throw Error("only ASCII PLY is supported");
  if (elements.empty() || elements.front().first != "vertex")
    throw Error("PLY must start with a vertex element");
  auto find = [&](const std::string& n) {
    auto it = std::find(vertex_props.begin(), vertex_props.end(), n);
    return it == vertex_props.end() ? -1 : static_cast<int>(it - vertex_props.begin());
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  const int ir = find("red"), ig = find("green"), ib = find("blue");
  if (ix < 0 || iy < 0 || iz < 0) throw Error("PLY vertex element lacks x/y/z");
  const bool has_rgb = ir >= 0 && ig >= 0 && ib >= 0;

  SceneData s;
  std::vector<double> vals(vertex_props.size());
  std::vector<Vec3> rgb;
  for (std::size_t v = 0; v < vertex_count; ++v) {
    for (auto& x : vals)
      if (!(in >> x)) throw Error("PLY vertex data truncated");
    s.cloud.positions.push_back({vals[ix], vals[iy], vals[iz]});
    if (has_rgb) rgb.push_back({vals[ir], vals[ig], vals[ib]});
  }
  if (has_rgb) {
    double mx = 0;
    for (const auto& c : rgb) mx = std::max({mx, c[0], c[1], c[2]});
    const double div = mx > 1.0 ? 255.0 : 1.0;
    s.cloud.attributes = Tensor<double>(rgb.size(), 3);
    for (std::size_t i = 0; i < rgb.size(); ++i)
      for (int a = 0; a < 3; ++a) s.cloud.attributes(i, a) = std::clamp(rgb[i][a] / div, 0.0, 1.0);
  }
  s.validate();
  return s;
}

SceneData read_ascii_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto s = parse_ascii_ply(ss.str());
  s.cloud.id = path.stem().string();
  return s;
}

}  // namespace clickseg
