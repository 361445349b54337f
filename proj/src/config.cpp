#include "redformer/config.hpp"

#include "redformer/metrics.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

namespace redformer::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw ConfigError("cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("expected true or false, got '" + value + "'");
}

using Setter = std::function<void(const std::string&)>;

void apply(const std::map<std::string, std::string>& kv, const std::map<std::string, Setter>& setters,
           const std::string& source) {
  for (const auto& [k, v] : kv) {
    const auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError(source + ": unknown key '" + k + "'");
    try {
      it->second(v);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ": key '" + k + "': " + e.what());
    }
  }
}

}  // namespace

std::string optimizer_name(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid train config: " + m); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
  if (steps <= 0) fail("steps must be > 0");
  if (batch_size <= 0) fail("batch_size must be > 0");
  if (capacity_k < 1) fail("capacity_k must be >= 1");
  if (channels <= 0 || channels % 2 != 0) fail("channels must be positive and even");
  if (heads <= 0 || channels % heads != 0) fail("heads must divide channels");
  if (layers <= 0) fail("layers must be > 0");
  if (queries <= 0) fail("queries must be > 0");
  if (loss.cls < 0.0 || loss.box < 0.0 || !(loss.no_object > 0.0)) fail("loss weights must be non-negative");
  if (grad_clip < 0.0) fail("grad_clip must be >= 0");
}

model::ModelDims TrainConfig::dims(const geometry::BevGridSpec& grid) const {
  return {channels, layers, heads, queries, capacity_k, grid.x_cells, grid.y_cells};
}

bool TrainConfig::operator==(const TrainConfig& o) const { return to_text(*this) == to_text(o); }

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key or value");
    if (!out.emplace(key, value).second)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return out;
}

TrainConfig parse_train_config(const std::string& text, const std::string& source) {
  TrainConfig c;
  const auto kv = parse_key_values(text, source);
  auto num = [](auto& field) -> Setter {
    return [&field](const std::string& v) { field = parse_number<std::remove_reference_t<decltype(field)>>(v); };
  };
  auto boolean = [](bool& field) -> Setter {
    return [&field](const std::string& v) { field = parse_bool(v); };
  };
  const std::map<std::string, Setter> setters{
      {"lr", num(c.lr)},
      {"steps", num(c.steps)},
      {"batch_size", num(c.batch_size)},
      {"seed", num(c.seed)},
      {"with_rb", boolean(c.with_rb)},
      {"with_mtl", boolean(c.with_mtl)},
      {"capacity_k", num(c.capacity_k)},
      {"optimizer",
       [&](const std::string& v) {
         if (v == "sgd")
           c.optimizer = Optimizer::sgd;
         else if (v == "adam")
           c.optimizer = Optimizer::adam;
         else
           throw ConfigError("expected sgd or adam, got '" + v + "'");
       }},
      {"channels", num(c.channels)},
      {"layers", num(c.layers)},
      {"heads", num(c.heads)},
      {"queries", num(c.queries)},
      {"lambda_cls", num(c.loss.cls)},
      {"lambda_box", num(c.loss.box)},
      {"no_object_weight", num(c.loss.no_object)},
      {"grad_clip", num(c.grad_clip)},
      {"early_stop", boolean(c.early_stop)},
      {"data", [&](const std::string& v) { c.data = v; }},
  };
  apply(kv, setters, source);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return parse_train_config(metrics::read_text(path), path.string());
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "lr = " << c.lr << "\n"
    << "steps = " << c.steps << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "seed = " << c.seed << "\n"
    << "with_rb = " << (c.with_rb ? "true" : "false") << "\n"
    << "with_mtl = " << (c.with_mtl ? "true" : "false") << "\n"
    << "capacity_k = " << c.capacity_k << "\n"
    << "optimizer = " << optimizer_name(c.optimizer) << "\n"
    << "channels = " << c.channels << "\n"
    << "layers = " << c.layers << "\n"
    << "heads = " << c.heads << "\n"
    << "queries = " << c.queries << "\n"
    << "lambda_cls = " << c.loss.cls << "\n"
    << "lambda_box = " << c.loss.box << "\n"
    << "no_object_weight = " << c.loss.no_object << "\n"
    << "grad_clip = " << c.grad_clip << "\n"
    << "early_stop = " << (c.early_stop ? "true" : "false") << "\n";
  if (!c.data.empty()) o << "data = " << c.data << "\n";
  return o.str();
}

data::SceneConfig parse_scene_config(const std::string& text, const std::string& source) {
  data::SceneConfig c;
  const auto kv = parse_key_values(text, source);
  auto num = [](auto& field) -> Setter {
    return [&field](const std::string& v) { field = parse_number<std::remove_reference_t<decltype(field)>>(v); };
  };
  const std::map<std::string, Setter> setters{
      {"frames_per_scene", num(c.frames_per_scene)},
      {"frame_interval", num(c.frame_interval)},
      {"min_objects", num(c.min_objects)},
      {"max_objects", num(c.max_objects)},
      {"world_extent", num(c.world_extent)},
      {"min_speed", num(c.min_speed)},
      {"max_speed", num(c.max_speed)},
      {"max_ego_speed", num(c.max_ego_speed)},
      {"rain_probability", num(c.rain_probability)},
      {"night_probability", num(c.night_probability)},
      {"rain_noise_sigma", num(c.rain_noise_sigma)},
      {"rain_contrast", num(c.rain_contrast)},
      {"night_brightness", num(c.night_brightness)},
      {"radar_dropout", num(c.radar_dropout)},
      {"radar_noise_sigma", num(c.radar_noise_sigma)},
      {"radar_points_per_object", num(c.radar_points_per_object)},
      {"radar_range", num(c.radar_range)},
      {"radar_half_fov", num(c.radar_half_fov)},
      {"clutter_points", num(c.clutter_points)},
      {"image_width", num(c.image_width)},
      {"image_height", num(c.image_height)},
      {"seed", num(c.seed)},
  };
  apply(kv, setters, source);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

data::SceneConfig load_scene_config(const std::filesystem::path& path) {
  return parse_scene_config(metrics::read_text(path), path.string());
}

}  // namespace redformer::config
