"""Validation utilities for configs, manifests and checkpoint headers."""

from numbers import Integral, Real
from typing import Any, Callable, Dict, Iterable, List, Union

from .exceptions import ValidationError


class DataValidator:
    """Rule-based validator for flat mappings of values."""

    def __init__(self) -> None:
        """Initialize data validator."""
        self.validation_rules: Dict[str, List[Callable]] = {}

    def add_rule(self, field_name: str, validator: Callable) -> None:
        """Add validation rule for a field.

        Args:
            field_name: Name of the field to validate
            validator: Validation function raising ValidationError
        """
        if field_name not in self.validation_rules:
            self.validation_rules[field_name] = []
        self.validation_rules[field_name].append(validator)

    def validate(self, data: Dict[str, Any]) -> Dict[str, List[str]]:
        """Validate data against all rules.

        Args:
            data: Data to validate

        Returns:
            Dictionary of validation errors by field
        """
        errors: Dict[str, List[str]] = {}

        for field_name, validators in self.validation_rules.items():
            field_errors = []
            value = data.get(field_name)

            for validator in validators:
                try:
                    validator(value)
                except ValidationError as e:
                    field_errors.append(e.message)
                except Exception as e:
                    field_errors.append(f"Validation error: {str(e)}")

            if field_errors:
                errors[field_name] = field_errors

        return errors

    def is_valid(self, data: Dict[str, Any]) -> bool:
        """Check if data is valid.

        Args:
            data: Data to validate

        Returns:
            True if valid, False otherwise
        """
        return len(self.validate(data)) == 0


class SchemaValidator:
    """Schema validation for JSON documents (manifests, checkpoint headers)."""

    def __init__(self) -> None:
        """Initialize schema validator."""
        self.schemas: Dict[str, Dict[str, Any]] = {}

    def add_schema(self, name: str, schema: Dict[str, Any]) -> None:
        """Add schema definition.

        Args:
            name: Schema name
            schema: Schema definition
        """
        self.schemas[name] = schema

    def validate_data(
        self, data: Union[Dict, List[Dict]], schema_name: str
    ) -> Dict[str, Any]:
        """Validate data against schema.

        Args:
            data: Data to validate
            schema_name: Name of the schema to validate against

        Returns:
            Validation result with errors
        """
        if schema_name not in self.schemas:
            raise ValidationError(f"Schema '{schema_name}' not found")

        schema = self.schemas[schema_name]
        result: Dict[str, Any] = {"valid": True, "errors": [], "validated_count": 0}

        data_list: List[Dict[str, Any]] = [data] if isinstance(data, dict) else data

        for i, record in enumerate(data_list):
            record_errors = self._validate_record(record, schema)
            if record_errors:
                result["valid"] = False
                result["errors"].extend(
                    [f"Record {i}: {error}" for error in record_errors]
                )
            else:
                result["validated_count"] += 1

        return result

    def _validate_record(
        self, record: Dict[str, Any], schema: Dict[str, Any]
    ) -> List[str]:
        errors = []

        for field in schema.get("required", []):
            if field not in record or record[field] is None:
                errors.append(f"Required field '{field}' is missing")

        properties = schema.get("properties", {})
        for field, value in record.items():
            if field in properties:
                errors.extend(self._validate_field(value, properties[field], field))

        return errors

    def _validate_field(
        self, value: Any, field_schema: Dict[str, Any], field_name: str
    ) -> List[str]:
        errors: List[str] = []

        expected_type = field_schema.get("type")
        if expected_type and not self._check_type(value, expected_type):
            errors.append(f"Field '{field_name}' must be of type {expected_type}")
            return errors

        if expected_type in ["number", "integer"]:
            minimum = field_schema.get("minimum")
            maximum = field_schema.get("maximum")
            if minimum is not None and value < minimum:
                errors.append(f"Field '{field_name}' must be at least {minimum}")
            if maximum is not None and value > maximum:
                errors.append(f"Field '{field_name}' must be at most {maximum}")

        elif expected_type == "string":
            enum_values = field_schema.get("enum")
            if enum_values and value not in enum_values:
                errors.append(f"Field '{field_name}' must be one of: {enum_values}")

        elif expected_type == "array":
            min_items = field_schema.get("minItems")
            if min_items is not None and len(value) < min_items:
                errors.append(
                    f"Field '{field_name}' must have at least {min_items} items"
                )
            items_schema = field_schema.get("items")
            if items_schema:
                for i, item in enumerate(value):
                    errors.extend(
                        self._validate_field(item, items_schema, f"{field_name}[{i}]")
                    )

        elif expected_type == "object":
            for field in field_schema.get("required", []):
                if field not in value:
                    errors.append(f"Field '{field_name}.{field}' is missing")
            for prop_name, prop_schema in field_schema.get("properties", {}).items():
                if prop_name in value:
                    errors.extend(
                        self._validate_field(
                            value[prop_name], prop_schema, f"{field_name}.{prop_name}"
                        )
                    )

        return errors

    def _check_type(self, value: Any, expected_type: str) -> bool:
        if value is None:
            return True

        if expected_type == "integer":
            return isinstance(value, Integral) and not isinstance(value, bool)
        if expected_type == "number":
            return isinstance(value, Real) and not isinstance(value, bool)

        type_mapping: Dict[str, Any] = {
            "string": str,
            "boolean": bool,
            "array": list,
            "object": dict,
        }
        expected_python_type = type_mapping.get(expected_type)
        if expected_python_type is not None:
            return isinstance(value, expected_python_type)

        return False


def validate_positive_number(value: Any) -> None:
    """Validate positive number."""
    if value is None:
        return

    try:
        num = float(value)
    except (ValueError, TypeError):
        raise ValidationError("Value must be a number", value=value)
    if not num > 0:
        raise ValidationError("Value must be positive", value=value)


def validate_non_negative_number(value: Any) -> None:
    """Validate number that may be zero."""
    if value is None:
        return

    try:
        num = float(value)
    except (ValueError, TypeError):
        raise ValidationError("Value must be a number", value=value)
    if not num >= 0:
        raise ValidationError("Value must be non-negative", value=value)


def validate_positive_int(value: Any) -> None:
    """Validate strictly positive integer."""
    if value is None:
        return

    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ValidationError("Value must be an integer", value=value)
    if value < 1:
        raise ValidationError("Value must be at least 1", value=value)


def validate_int_at_least(minimum: int) -> Callable[[Any], None]:
    """Build a validator for integers bounded below."""

    def validator(value: Any) -> None:
        if value is None:
            return
        if isinstance(value, bool) or not isinstance(value, Integral):
            raise ValidationError("Value must be an integer", value=value)
        if value < minimum:
            raise ValidationError(f"Value must be at least {minimum}", value=value)

    return validator


def validate_unit_interval(
    open_low: bool = True, open_high: bool = True
) -> Callable[[Any], None]:
    """Build a validator for values inside the unit interval."""

    def validator(value: Any) -> None:
        if value is None:
            return
        num = float(value)
        low_ok = num > 0 if open_low else num >= 0
        high_ok = num < 1 if open_high else num <= 1
        if not (low_ok and high_ok):
            lo = "(" if open_low else "["
            hi = ")" if open_high else "]"
            raise ValidationError(f"Value must lie in {lo}0, 1{hi}", value=value)

    return validator


def validate_choice(choices: Iterable[str]) -> Callable[[Any], None]:
    """Build a validator restricting a value to fixed choices."""
    allowed = tuple(choices)

    def validator(value: Any) -> None:
        if value is None:
            return
        if value not in allowed:
            raise ValidationError(f"Value must be one of: {list(allowed)}", value=value)

    return validator


def validate_not_empty(value: Any) -> None:
    """Validate that value is not empty."""
    if value is None or (isinstance(value, (str, list, tuple)) and len(value) == 0):
        raise ValidationError("Value cannot be empty", value=value)
    if isinstance(value, str) and not value.strip():
        raise ValidationError("Value cannot be empty", value=value)
