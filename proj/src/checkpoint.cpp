#include "redformer/checkpoint.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace redformer::checkpoint {

namespace {

using json = nlohmann::json;

constexpr std::array<char, 8> kMagic{'R', 'D', 'F', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

template <class T>
T get_le(std::istream& in) {
  T v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    const int c = in.get();
    if (c == EOF) throw CheckpointError("truncated checkpoint");
    v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

json history_to_json(const std::vector<StepLoss>& h) {
  json out = json::array();
  for (const auto& s : h) out.push_back({s.step, s.l_det, s.l_rain, s.l_tod, s.l_joint});
  return out;
}

}  // namespace

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto census = ckpt.params.census();
  json tensors = json::array();
  for (const auto& t : census)
    tensors.push_back({{"group", t.group}, {"name", t.name}, {"rows", t.var.rows()}, {"cols", t.var.cols()}});
  const auto& d = ckpt.params.dims;
  const json header = {
      {"config", config::to_text(ckpt.config)},
      {"grid", {{"x_cells", ckpt.grid.x_cells}, {"y_cells", ckpt.grid.y_cells}, {"cell_size", ckpt.grid.cell_size}}},
      {"dims",
       {{"channels", d.channels},
        {"layers", d.layers},
        {"heads", d.heads},
        {"queries", d.queries},
        {"capacity", d.capacity},
        {"x_cells", d.x_cells},
        {"y_cells", d.y_cells}}},
      {"step", ckpt.step},
      {"history", history_to_json(ckpt.history)},
      {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointSchemaVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : census) {
    const auto& m = t.var.value();
    for (Eigen::Index k = 0; k < m.size(); ++k)
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[k])));
  }
  if (!out) throw CheckpointError("write failed for '" + path.string() + "'");
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  const std::string where = "checkpoint '" + path.string() + "': ";
  try {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw CheckpointError("not a checkpoint file");
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointSchemaVersion)
      throw CheckpointError("schema_version " + std::to_string(version) + " unsupported (expected " +
                            std::to_string(kCheckpointSchemaVersion) + ")");
    const auto len = get_le<std::uint64_t>(in);
    if (len > (1u << 28)) throw CheckpointError("header too large");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError("truncated header");
    const json header = json::parse(text);

    Checkpoint ck;
    ck.config = config::parse_train_config(header.at("config").get<std::string>(), "checkpoint config");
    const auto& g = header.at("grid");
    ck.grid = {g.at("x_cells").get<int>(), g.at("y_cells").get<int>(), g.at("cell_size").get<double>()};
    const auto& dj = header.at("dims");
    model::ModelDims dims{dj.at("channels").get<int>(), dj.at("layers").get<int>(), dj.at("heads").get<int>(),
                          dj.at("queries").get<int>(),  dj.at("capacity").get<int>(), dj.at("x_cells").get<int>(),
                          dj.at("y_cells").get<int>()};
    ck.step = header.at("step").get<int>();
    for (const auto& s : header.at("history"))
      ck.history.push_back({s.at(0).get<int>(), s.at(1).get<double>(), s.at(2).get<double>(), s.at(3).get<double>(),
                            s.at(4).get<double>()});

    // Shapes come from a fresh init; values are overwritten below.
    ck.params = model::ModelParams::init(dims, 0);
    auto census = ck.params.census();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != census.size()) throw CheckpointError("parameter census mismatch");
    for (std::size_t k = 0; k < census.size(); ++k) {
      const auto& tj = tensors[k];
      auto& var = census[k].var;
      if (tj.at("name").get<std::string>() != census[k].name || tj.at("rows").get<Eigen::Index>() != var.rows() ||
          tj.at("cols").get<Eigen::Index>() != var.cols())
        throw CheckpointError("tensor '" + tj.at("name").get<std::string>() + "' does not match the census");
      auto& m = var.mutable_value();
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in)));
    }
    if (in.peek() != EOF) throw CheckpointError("trailing bytes after tensors");
    return ck;
  } catch (const CheckpointError& e) {
    throw CheckpointError(where + e.what());
  } catch (const json::exception& e) {
    throw CheckpointError(where + "bad header: " + e.what());
  } catch (const config::ConfigError& e) {
    throw CheckpointError(where + e.what());
  }
}

}  // namespace redformer::checkpoint
