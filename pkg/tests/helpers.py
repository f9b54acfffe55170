"""Shared test helpers: scripted endpoints and canned pipeline scenarios."""

from __future__ import annotations

from splitsql.llm import ModelEndpoint, ModelPair, scripted_provider


def scripted_endpoint(script: list[tuple[str, str]], model_id: str = "scripted-model") -> ModelEndpoint:
    return ModelEndpoint(provider=scripted_provider(script), model_id=model_id)


def scripted_pair(script: list[tuple[str, str]], model_id: str = "scripted-model") -> ModelPair:
    """One shared single-use script backing both model roles, so a whole
    multi-stage scenario reads as a single ordered list."""
    endpoint = scripted_endpoint(script, model_id)
    return ModelPair(reasoning=endpoint, coding=endpoint)


AVG_ORDERED_SQL = (
    "SELECT AVG(p.product_price) FROM Order_Items oi "
    "JOIN Products p ON oi.product_id = p.product_id"
)

# Divide-and-merge scenario for the "average price of ordered products"
# question over the customer_orders database: table selection, a 4-way
# decomposition, one generation per sub-question, planner + executor, and a
# column-selection echo. Matchers key on stage-specific template phrases and
# on each sub-question's text.
def avg_ordered_products_script() -> list[tuple[str, str]]:
    return [
        ("comma-separated list of the table names", "Order_Items, Products, Orders"),
        (
            "numbered list of sub-questions",
            "1. Find the price of each product.\n"
            "2. Join the Orders and Order_Items tables to associate orders with their items.\n"
            "3. Join the result with the Products table to get the prices of the ordered products.\n"
            "4. Calculate the average price of the ordered products.",
        ),
        (
            "Find the price of each product",
            "SELECT product_id, product_price FROM Products",
        ),
        (
            "Join the Orders and Order_Items tables",
            "SELECT o.order_id, oi.order_item_id, oi.product_id FROM Orders o "
            "JOIN Order_Items oi ON o.order_id = oi.order_id",
        ),
        (
            "prices of the ordered products",
            "SELECT oi.order_item_id, p.product_price FROM Order_Items oi "
            "JOIN Products p ON oi.product_id = p.product_id",
        ),
        ("Calculate the average price", AVG_ORDERED_SQL),
        (
            "Work out how the sub-queries",
            "Use the last sub-query unchanged; it already computes the average over ordered products.",
        ),
        ("Combine the sub-queries below", f"```sql\n{AVG_ORDERED_SQL}\n```"),
        ("returns exactly the columns", AVG_ORDERED_SQL),
    ]


def baseline_wrong_avg_script() -> list[tuple[str, str]]:
    # The one-step parser averages every product, ignoring orders.
    return [("in one step", "SELECT AVG(product_price) FROM Products")]
