#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "rarefind/dataset.hpp"
#include "rarefind/metrics.hpp"
#include "rarefind/session.hpp"

namespace rarefind {

/// An API failure: HTTP status plus the {code, message, details} body.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message,
               nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(message),
        status_(status),
        code_(std::move(code)),
        details_(std::move(details)) {}

  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }
  nlohmann::json body() const;

 private:
  int status_;
  std::string code_;
  nlohmann::json details_;
};

enum class Phase { awaiting_labels, ready, finished };
std::string_view to_string(Phase p);

struct ServiceConfig {
  bool demo = false;                      // oracle labels on request
  SessionConfig defaults;                 // overridable per session
  CoverageConfig coverage;                // for the reported cov series
  std::optional<std::filesystem::path> event_log;
};

/// Sessions over server-configured datasets. Calls on one session are
/// serialized; different sessions run concurrently. Every method returns
/// the JSON response body or throws ServiceError without changing state.
class FeedbackService {
 public:
  explicit FeedbackService(ServiceConfig config = {});
  ~FeedbackService();
  FeedbackService(const FeedbackService&) = delete;
  FeedbackService& operator=(const FeedbackService&) = delete;

  /// `image_root` resolves relative image paths (normally the manifest dir).
  void add_dataset(std::shared_ptr<const EmbeddedDataset> dataset,
                   std::filesystem::path image_root = {});

  nlohmann::json create_session(const nlohmann::json& request);
  nlohmann::json get_batch(const std::string& session_id);
  nlohmann::json submit_labels(const std::string& session_id, const nlohmann::json& request);
  nlohmann::json get_state(const std::string& session_id);
  nlohmann::json list_datasets() const;

  /// Path of the sample's image, or nullopt when the dataset has none.
  std::optional<std::filesystem::path> image_path(const std::string& dataset,
                                                  std::string_view sample_id) const;

  /// Re-applies an event log written by a previous instance; returns the
  /// number of events applied. Call before accepting requests.
  std::size_t replay(const std::filesystem::path& event_log);

  std::size_t session_count() const;
  bool demo() const noexcept { return config_.demo; }

 private:
  struct DatasetEntry {
    std::shared_ptr<const EmbeddedDataset> dataset;
    std::filesystem::path image_root;
  };
  struct Session;

  std::shared_ptr<Session> find(const std::string& id) const;
  const DatasetEntry& dataset_entry(const std::string& name) const;
  std::shared_ptr<const ClusterSets> clusters_for(const DatasetEntry& entry, ClassId class_id);
  nlohmann::json create_with_id(const std::string& id, const nlohmann::json& request);
  void log_event(const nlohmann::json& event);
  std::string new_session_id();

  ServiceConfig config_;
  std::map<std::string, DatasetEntry> datasets_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;

  std::mutex clusters_mutex_;
  std::map<std::pair<std::string, ClassId>, std::shared_ptr<const ClusterSets>> clusters_;

  std::mutex log_mutex_;
  std::ofstream log_;
  bool replaying_ = false;

  std::mutex id_mutex_;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;
};

/// HTTP binding of FeedbackService.
class HttpServer {
 public:
  explicit HttpServer(FeedbackService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to `port` (0 picks a free port) and returns the bound port,
  /// or -1 on failure.
  int bind(const std::string& host, int port);
  /// Serves until stop(); blocks.
  bool listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rarefind
