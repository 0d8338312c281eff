#include "mqir/service/server.hpp"

#include <httplib.h>

#include <json.hpp>

namespace mqir::service {

using json = nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, int status, const std::string& message,
                const std::string& field = {}) {
  json body{{"error", message}};
  if (!field.empty()) {
    body["field"] = field;
  }
  res.status = status;
  res.set_content(body.dump(), kJson);
}

}  // namespace

QueryService::QueryService(Loader loader)
    : loader_(std::move(loader)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

QueryService::~QueryService() { stop(); }

bool QueryService::ready() const {
  std::lock_guard lock(mutex_);
  return state_ != nullptr;
}

std::string QueryService::load_error() const {
  std::lock_guard lock(mutex_);
  return load_error_;
}

void QueryService::wait_loaded() const {
  while (!loaded_.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

void QueryService::install_routes() {
  auto current = [this] {
    std::lock_guard lock(mutex_);
    return state_;
  };

  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server_->Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server_->Get("/v1/healthz", [this, current](const httplib::Request&, httplib::Response& res) {
    const auto s = current();
    if (!s) {
      const std::string error = load_error();
      json body{{"status", error.empty() ? "loading" : "failed"}};
      if (!error.empty()) {
        body["error"] = error;
      }
      res.status = 503;
      res.set_content(body.dump(), kJson);
      return;
    }
    const double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    json body{{"status", "ok"},
              {"model_id", s->engine->model_id()},
              {"index_size", s->engine->index().size()},
              {"uptime_s", uptime}};
    res.set_content(body.dump(), kJson);
  });

  server_->Get("/v1/meta", [current](const httplib::Request&, httplib::Response& res) {
    const auto s = current();
    if (!s) {
      send_error(res, 503, "service is loading");
      return;
    }
    res.set_content(s->meta_json, kJson);
  });

  server_->Post("/v1/query", [current](const httplib::Request& req, httplib::Response& res) {
    const auto s = current();
    if (!s) {
      send_error(res, 503, "service is loading");
      return;
    }
    try {
      const QueryRequest q = parse_query_request(req.body);
      res.set_content(response_json(s->engine->handle(q)), kJson);
    } catch (const RequestError& e) {
      send_error(res, e.status(), e.what(), e.field());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });

  server_->Post("/v1/debug/boxes", [current](const httplib::Request& req, httplib::Response& res) {
    const auto s = current();
    if (!s) {
      send_error(res, 503, "service is loading");
      return;
    }
    try {
      res.set_content(boxes_json(s->engine->boxes(parse_query_request(req.body))), kJson);
    } catch (const RequestError& e) {
      send_error(res, e.status(), e.what(), e.field());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });

  server_->Get(R"(/v1/images/([^/]+))", [current](const httplib::Request& req, httplib::Response& res) {
    const auto s = current();
    if (!s) {
      send_error(res, 503, "service is loading");
      return;
    }
    const std::string id = req.matches[1];
    const data::Scene* scene = s->scenes ? s->scenes->find(id) : nullptr;
    if (scene == nullptr) {
      send_error(res, 404, "no scene '" + id + "'");
      return;
    }
    res.set_content(encode_png(render_scene(*scene)), "image/png");
  });

  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      send_error(res, res.status, httplib::status_message(res.status));
    }
  });
}

int QueryService::start(const std::string& host, int port) {
  started_ = std::chrono::steady_clock::now();
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  }
  listen_thread_ = std::thread([this] { server_->listen_after_bind(); });
  load_thread_ = std::thread([this] {
    try {
      auto s = std::make_shared<const ServiceState>(loader_());
      std::lock_guard lock(mutex_);
      state_ = std::move(s);
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      load_error_ = e.what();
    }
    loaded_ = true;
  });
  return bound;
}

void QueryService::stop() {
  if (load_thread_.joinable()) {
    load_thread_.join();
  }
  server_->stop();
  if (listen_thread_.joinable()) {
    listen_thread_.join();
  }
}

}  // namespace mqir::service
