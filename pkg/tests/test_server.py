"""
Tests for the MCP server and the inference tool component
"""
import json

import pytest
from fastmcp import Client

from constrained_inference.components import InferenceTools, ingest
from constrained_inference.models import Clustering, CorefGold, SrlGold
from constrained_inference.server import create_server

EXPECTED_TOOLS = ["srl_infer", "coref_infer", "srl_evaluate", "coref_evaluate", "render_prompt"]


@pytest.fixture
def tools(test_config) -> InferenceTools:
    return InferenceTools(test_config)


class TestServerArchitecture:
    """Server creation and registration"""

    def test_server_initialization(self, test_config):
        server = create_server(test_config)
        assert server.name == "Constrained Inference Server"
        assert test_config.cache_dir.exists()

    async def test_tool_registration(self, test_config):
        server = create_server(test_config)
        tool_names = list((await server.get_tools()).keys())
        for name in EXPECTED_TOOLS:
            assert name in tool_names, f"Tool {name} not found in {tool_names}"

    async def test_resource_registration(self, test_config):
        server = create_server(test_config)
        resource_uris = list((await server.get_resources()).keys())
        for uri in ("inference://templates", "server://info"):
            assert uri in resource_uris, f"Resource {uri} not found in {resource_uris}"

    async def test_tool_metadata(self, test_config):
        server = create_server(test_config)
        for name in EXPECTED_TOOLS:
            tool = await server.get_tool(name)
            assert tool.description

    async def test_call_through_client(self, test_config):
        server = create_server(test_config)
        async with Client(server) as client:
            result = await client.call_tool("render_prompt", {
                "family": "t5-qa", "context": "Elrond gave Aragorn the sword", "question": "Who gave?",
            })
        payload = json.loads(result.content[0].text)
        assert payload["prompt"] == "question: Who gave? context: Elrond gave Aragorn the sword"


class TestInferenceTools:
    """Tool methods called directly"""

    async def test_templates_resource(self, tools):
        data = json.loads(await tools.list_templates())
        assert "coref-flan" in data["templates"]
        assert data["choices"]["coref-flan"] == ["Yes", "No"]

    async def test_srl_infer(self, tools, toy_srl_instance):
        result = await tools.srl_infer(None, ingest.srl_instance_record(toy_srl_instance))
        texts = [a["text"] for a in result["structure"]["assignments"]]
        assert texts == ["Elrond", "Aragorn", "the sword"]
        assert result["details"]["complete"]

    async def test_srl_infer_rejects_coref_solver(self, tools, toy_srl_instance):
        result = await tools.srl_infer(None, ingest.srl_instance_record(toy_srl_instance), solver="r2l")
        assert "error" in result

    async def test_srl_infer_bad_record(self, tools):
        result = await tools.srl_infer(None, {"instance_id": "x"})
        assert "error" in result

    async def test_coref_infer(self, tools, three_mention_doc):
        result = await tools.coref_infer(None, ingest.coref_instance_record(three_mention_doc))
        assert result["prediction"]["clusters"] == [["1", "2"], ["3"]]
        assert result["details"]["optimal"] is True

    async def test_evaluate_round(self, tools, toy_srl_instance, three_mention_doc):
        srl = await tools.srl_infer(None, ingest.srl_instance_record(toy_srl_instance))
        gold = ingest.srl_gold_record(
            SrlGold("toy", (("a", ("Elrond",)), ("b", ("Aragorn",)), ("c", ("the sword",))))
        )
        report = await tools.srl_evaluate(None, [srl["structure"]], [gold])
        assert report["exact_s"] == 100.0

        coref = await tools.coref_infer(None, ingest.coref_instance_record(three_mention_doc))
        coref_gold = ingest.coref_gold_record(CorefGold("doc3", Clustering((("1", "2"), ("3",)))))
        report = await tools.coref_evaluate(None, [coref["prediction"]], [coref_gold])
        assert report["conll"] == 100.0

    async def test_evaluate_misaligned(self, tools):
        gold = ingest.coref_gold_record(CorefGold("a", Clustering((("1",),))))
        prediction = {"document_id": "b", "decisions": [], "clusters": [["1"]]}
        assert "error" in await tools.coref_evaluate(None, [prediction], [gold])

    async def test_render_link_prompt(self, tools):
        result = await tools.render_prompt(None, "coref-flan", "S", mention1="Al", mention2="him")
        assert result["prompt"] == "S \n In the above passage, does Al refer to him? Yes or No?"
        assert result["choices"] == ["Yes", "No"]

    async def test_render_missing_slot(self, tools):
        result = await tools.render_prompt(None, "t5-qa", "S")
        assert "error" in result
