#include "embeddings.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace tvr {

DatasetManifest Dataset::manifest() const {
  DatasetManifest m;
  m.dim = dim;
  m.items.reserve(items.size());
  for (const Item& it : items)
    m.items.push_back({it.id, it.video.frame_count(), it.text.word_count(),
                       it.audio.present});
  return m;
}

bool Dataset::any_audio() const {
  for (const Item& it : items)
    if (it.audio.present) return true;
  return false;
}

namespace {

constexpr const char* kManifestMagic = "tvr-manifest";
constexpr const char* kManifestVersion = "v1";

[[noreturn]] void format_error(const std::string& what) {
  fail(ErrorCode::format, what);
}

void append_f32_le(std::string& out, double v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

double read_f32_le(const std::string& blob, size_t offset) {
  const auto b = [&](size_t i) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + i]));
  };
  const std::uint32_t bits = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "short write to " + path);
}

size_t item_value_count(const ManifestEntry& e, int dim) {
  return static_cast<size_t>(dim) *
         (e.frame_count + 1 + e.word_count + (e.has_audio ? 1 : 0));
}

}  // namespace

DatasetManifest parse_manifest(const std::string& manifest_path) {
  std::istringstream in(read_file(manifest_path));
  std::string line;
  if (!std::getline(in, line)) format_error("empty manifest");
  {
    std::istringstream ls(line);
    std::string magic, version;
    ls >> magic >> version;
    if (magic != kManifestMagic || version != kManifestVersion)
      format_error("bad manifest header: " + line);
  }

  DatasetManifest m;
  int declared_count = -1;
  std::unordered_set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dim") {
      if (!(ls >> m.dim) || m.dim < 1)
        format_error("bad dim on manifest line " + std::to_string(lineno));
    } else if (key == "count") {
      if (!(ls >> declared_count) || declared_count < 0)
        format_error("bad count on manifest line " + std::to_string(lineno));
    } else if (key == "item") {
      ManifestEntry e;
      std::string frames_kw, words_kw, audio_kw;
      int audio_flag = -1;
      if (!(ls >> e.id >> frames_kw >> e.frame_count >> words_kw >>
            e.word_count >> audio_kw >> audio_flag) ||
          frames_kw != "frames" || words_kw != "words" || audio_kw != "audio")
        format_error("malformed item on manifest line " + std::to_string(lineno));
      if (e.frame_count < 1 || e.word_count < 1)
        format_error("item " + e.id + ": frame and word counts must be >= 1");
      if (audio_flag != 0 && audio_flag != 1)
        format_error("item " + e.id + ": audio flag must be 0 or 1");
      e.has_audio = audio_flag == 1;
      if (!seen.insert(e.id).second)
        format_error("duplicate item id " + e.id);
      m.items.push_back(std::move(e));
    } else {
      format_error("unknown manifest key '" + key + "' on line " +
                   std::to_string(lineno));
    }
  }
  if (m.dim < 1) format_error("manifest missing dim");
  if (declared_count >= 0 &&
      declared_count != static_cast<int>(m.items.size()))
    format_error("manifest count does not match item lines");
  return m;
}

Dataset load_dataset(const std::string& manifest_path, const std::string& blob_path) {
  const DatasetManifest m = parse_manifest(manifest_path);
  const std::string blob = read_file(blob_path);

  size_t expected_values = 0;
  for (const ManifestEntry& e : m.items) expected_values += item_value_count(e, m.dim);
  if (blob.size() != expected_values * 4)
    format_error("blob size " + std::to_string(blob.size()) +
                 " does not match manifest (expected " +
                 std::to_string(expected_values * 4) + " bytes)");

  Dataset ds;
  ds.dim = m.dim;
  ds.items.reserve(m.items.size());
  size_t off = 0;
  auto take_mat = [&](int rows) {
    Tensor t = Tensor::mat(rows, m.dim);
    for (int i = 0; i < t.size(); ++i, off += 4) t[i] = read_f32_le(blob, off);
    return t;
  };
  auto take_vec = [&]() {
    Tensor t = Tensor::vec(m.dim);
    for (int i = 0; i < t.size(); ++i, off += 4) t[i] = read_f32_le(blob, off);
    return t;
  };
  for (const ManifestEntry& e : m.items) {
    Item it;
    it.id = e.id;
    it.video.frames = take_mat(e.frame_count);
    it.text.sentence = take_vec();
    it.text.words = take_mat(e.word_count);
    it.audio.present = e.has_audio;
    if (e.has_audio) it.audio.audio = take_vec();
    ds.items.push_back(std::move(it));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& manifest_path,
                  const std::string& blob_path) {
  std::ostringstream man;
  man << kManifestMagic << ' ' << kManifestVersion << '\n';
  man << "dim " << ds.dim << '\n';
  man << "count " << ds.count() << '\n';
  std::string blob;
  for (const Item& it : ds.items) {
    if (it.id.find_first_of(" \t\n") != std::string::npos)
      format_error("item id contains whitespace: '" + it.id + "'");
    man << "item " << it.id << " frames " << it.video.frame_count() << " words "
        << it.text.word_count() << " audio " << (it.audio.present ? 1 : 0)
        << '\n';
    for (double v : it.video.frames.data()) append_f32_le(blob, v);
    for (double v : it.text.sentence.data()) append_f32_le(blob, v);
    for (double v : it.text.words.data()) append_f32_le(blob, v);
    if (it.audio.present)
      for (double v : it.audio.audio.data()) append_f32_le(blob, v);
  }
  write_file(manifest_path, man.str());
  write_file(blob_path, blob);
}

}  // namespace tvr
