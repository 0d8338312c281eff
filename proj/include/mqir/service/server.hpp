#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "mqir/service/query_engine.hpp"
#include "mqir/service/render.hpp"

namespace httplib {
class Server;
}

namespace mqir::service {

/// Everything a ready service answers from. Built once, then only read.
struct ServiceState {
  std::shared_ptr<const QueryEngine> engine;
  std::shared_ptr<const SceneStore> scenes;  // may be empty
  /// Body of GET /v1/meta.
  std::string meta_json;
};

/// HTTP front end. Listens immediately and answers 503 until the loader
/// has produced the state.
class QueryService {
 public:
  using Loader = std::function<ServiceState()>;

  explicit QueryService(Loader loader);
  ~QueryService();
  QueryService(const QueryService&) = delete;
  QueryService& operator=(const QueryService&) = delete;

  /// Binds (port 0 picks a free one), then starts serving and loading in
  /// the background. Returns the bound port.
  int start(const std::string& host, int port);
  void stop();

  bool ready() const;
  /// Non-empty once loading has failed.
  std::string load_error() const;
  /// Blocks until loading finished, successfully or not.
  void wait_loaded() const;

 private:
  void install_routes();

  Loader loader_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listen_thread_;
  std::thread load_thread_;
  std::shared_ptr<const ServiceState> state_;
  mutable std::mutex mutex_;
  std::string load_error_;
  std::atomic<bool> loaded_{false};
  std::chrono::steady_clock::time_point started_;
};

}  // namespace mqir::service
