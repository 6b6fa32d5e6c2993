import { describe, expect, it } from "vitest";

import { SessionApi } from "../src/api.js";
import { ChatController } from "../src/controller.js";
import { MockServer } from "./mock_server.js";

function setup() {
  const server = new MockServer();
  const api = new SessionApi("http://test", server.fetch);
  const controller = new ChatController(api);
  return { server, api, controller };
}

describe("ChatController", () => {
  it("starts with an empty transcript", async () => {
    const { controller } = setup();
    await controller.start("img://a.jpg", { width: 100, height: 100 });
    expect(controller.state.sessionId).not.toBeNull();
    expect(controller.state.turns).toEqual([]);
  });

  it("sends selections as events and refreshes the transcript", async () => {
    const { server, controller } = setup();
    await controller.start("img://a.jpg", { width: 100, height: 100 });
    controller.addSelection({ kind: "click", pointsPx: [[50, 50]] });
    await controller.send("what is this? <region>");
    expect(server.posts[0].events).toEqual([{ kind: "click", points_px: [[50, 50]] }]);
    expect(controller.state.turns).toHaveLength(2);
    expect(controller.state.turns[0].text).toBe("what is this? <box>0.500,0.500</box>");
    expect(controller.state.selections).toEqual([]);
    expect(controller.state.error).toBeNull();
  });

  it("restores a transcript after reload", async () => {
    const { server, controller } = setup();
    await controller.start("img://a.jpg", { width: 200, height: 100 });
    controller.addSelection({ kind: "box", pointsPx: [[20, 10], [100, 50]] });
    await controller.send("look");
    const sessionId = controller.state.sessionId!;

    const fresh = new ChatController(new SessionApi("http://test", server.fetch));
    await fresh.restore(sessionId);
    expect(fresh.state.turns).toHaveLength(2);
    expect(fresh.state.dims).toEqual({ width: 200, height: 100 });
  });

  it("blocks concurrent sends", async () => {
    const { controller } = setup();
    await controller.start("img://a.jpg", { width: 100, height: 100 });
    expect(controller.canSend).toBe(true);
    const first = controller.send("one");
    expect(controller.canSend).toBe(false);
    await first;
    expect(controller.canSend).toBe(true);
  });

  it("keeps the transcript on failure and retries the same payload", async () => {
    const { server, controller } = setup();
    await controller.start("img://a.jpg", { width: 100, height: 100 });
    controller.addSelection({ kind: "click", pointsPx: [[10, 10]] });

    server.failNextWith = 502;
    await controller.send("hello <region>");
    expect(controller.state.turns).toEqual([]);
    expect(controller.state.error?.canRetry).toBe(true);

    await controller.retry();
    expect(controller.state.error).toBeNull();
    expect(controller.state.turns).toHaveLength(2);
    expect(server.posts).toHaveLength(2);
    expect(server.posts[1]).toEqual(server.posts[0]);
  });

  it("422 is not retryable", async () => {
    const { server, controller } = setup();
    await controller.start("img://a.jpg", { width: 100, height: 100 });
    server.failNextWith = 422;
    await controller.send("<region> <region>");
    expect(controller.state.error?.canRetry).toBe(false);
  });
});
