#include "qulab/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "qulab/error.hpp"

namespace qulab {

using nlohmann::json;

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest parse error: ") + e.what());
  }
  RunManifest m;
  m.run_id = j.value("run_id", "");
  m.created_at = j.value("created_at", "");
  m.updated_at = j.value("updated_at", "");
  m.seed = j.value("seed", uint64_t{0});
  if (j.contains("stages")) {
    for (const auto& [name, sj] : j.at("stages").items()) {
      StageRecord rec;
      rec.done = sj.value("done", false);
      rec.error = sj.value("error", "");
      if (sj.contains("outputs")) {
        for (const auto& [file, crc] : sj.at("outputs").items()) {
          rec.outputs[file] = crc.get<uint32_t>();
        }
      }
      if (sj.contains("files_read")) {
        rec.files_read = sj.at("files_read").get<std::vector<std::string>>();
      }
      m.stages[name] = std::move(rec);
    }
  }
  return m;
}

void RunManifest::save(const std::string& path) const {
  json j;
  j["run_id"] = run_id;
  j["created_at"] = created_at;
  j["updated_at"] = updated_at;
  j["seed"] = seed;
  json stages_json = json::object();
  for (const auto& [name, rec] : stages) {
    json sj;
    sj["done"] = rec.done;
    sj["error"] = rec.error;
    json outputs = json::object();
    for (const auto& [file, crc] : rec.outputs) outputs[file] = crc;
    sj["outputs"] = outputs;
    sj["files_read"] = rec.files_read;
    stages_json[name] = std::move(sj);
  }
  j["stages"] = std::move(stages_json);

  // Atomic write: the manifest is the resume point of record.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + tmp);
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

bool RunManifest::stage_done(const std::string& name) const {
  auto it = stages.find(name);
  return it != stages.end() && it->second.done;
}

}  // namespace qulab
