#pragma once

// Checkpoint layout:
//   8 bytes   magic "TAMCKPT1"
//   8 bytes   little-endian uint64 header length N
//   N bytes   UTF-8 JSON header
//   rest      little-endian float32 tensor data
// Header: {"encoder": {"channels", "dilations", "kernel", "input_offset"}, "w_res", "meta",
//          "tensors": [{"name", "shape", "offset", "count"}]}, offsets in bytes
// from the start of the data section.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tamkit/common.hpp"
#include "tamkit/encoder.hpp"
#include "tamkit/image_io.hpp"

namespace tamkit {

inline constexpr char kCheckpointMagic[9] = "TAMCKPT1";

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::string serialize_checkpoint(Model& model, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header;
  header["encoder"] = {{"channels", model.encoder.config.channels},
                       {"dilations", model.encoder.config.dilations},
                       {"kernel", model.encoder.config.kernel},
                       {"input_offset", model.encoder.config.input_offset}};
  header["w_res"] = model.text.w_res;
  header["meta"] = extra;
  std::string data;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& t : tensors(model)) {
    list.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", data.size()}, {"count", t.values->size()}});
    for (double v : *t.values) detail::put_f32(data, static_cast<float>(v));
  }
  header["tensors"] = list;
  const std::string json = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u64(out, json.size());
  out += json;
  out += data;
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, Model& model,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  const auto bytes = serialize_checkpoint(model, extra);
  write_atomically(path, [&](std::ostream& out) { out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); });
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    fail(Errc::MalformedLine, path.string() + ": not a checkpoint");
  const auto header_len = detail::get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) fail(Errc::MalformedLine, path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::MalformedLine, path.string() + ": bad header: " + e.what());
  }
  const std::size_t data_start = 16 + header_len;

  Model model;
  try {
    EncoderConfig cfg;
    cfg.channels = header.at("encoder").at("channels").get<std::vector<std::size_t>>();
    cfg.dilations = header.at("encoder").at("dilations").get<std::vector<std::size_t>>();
    cfg.kernel = header.at("encoder").at("kernel").get<std::size_t>();
    cfg.input_offset = header.at("encoder").at("input_offset").get<double>();
    model.encoder = EncoderParams::zeros(cfg);
    model.text = TextualPathParams::identity(cfg.dim(), header.at("w_res").get<double>());

    std::map<std::string, nlohmann::json> by_name;
    for (const auto& t : header.at("tensors")) by_name[t.at("name").get<std::string>()] = t;
    for (auto& t : tensors(model)) {
      auto it = by_name.find(t.name);
      if (it == by_name.end()) fail(Errc::MalformedLine, path.string() + ": missing tensor " + t.name);
      const auto count = it->second.at("count").get<std::size_t>();
      const auto offset = it->second.at("offset").get<std::size_t>();
      if (count != t.values->size()) fail(Errc::DimMismatch, path.string() + ": tensor " + t.name + " has wrong size");
      if (data_start + offset + 4 * count > bytes.size())
        fail(Errc::MalformedLine, path.string() + ": tensor " + t.name + " runs past end of file");
      for (std::size_t i = 0; i < count; ++i)
        (*t.values)[i] = detail::get_f32(bytes.data() + data_start + offset + 4 * i);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::MalformedLine, path.string() + ": bad header: " + e.what());
  }
  return model;
}

}  // namespace tamkit
